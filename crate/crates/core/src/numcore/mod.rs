//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod lstm;
mod optim;
mod params;
mod tape;
mod tensor;

pub use lstm::{lstm_cell, lstm_cell_projected, LstmVars};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, Gradients, ParamId, ParamSet};
pub use tape::{log_softmax_row, softmax_row, Activation, Tape, Var};
pub use tensor::Tensor;
