//! AED and LSTM LM models, training, and checkpoints.

mod aed;
mod checkpoint;
mod layers;
mod lm;
mod train;

pub use aed::{
    AedConfig, AedModel, AedState, AttentionState, DecVars, DecoderKind, DecoderState, EncVars, EncoderOutput,
    StepVars,
};
pub use checkpoint::Container;
pub use lm::{LmConfig, LmRole, LmState, LstmLm};
pub(crate) use aed::{decoder_state_from, decoder_state_on, picked_sum, targets_with_eos};
pub use train::{evaluate, train, ExampleLoss, LossCurve, TrainConfig, Trainable};
