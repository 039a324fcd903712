//! Experiment pipeline behind the `ilmlab` binary: every subcommand is a
//! function here taking the effective configuration.

pub mod commands;
pub mod config;
pub mod layout;
pub mod manifest;

pub use commands::{
    cmd_decode, cmd_estimate, cmd_eval, cmd_gen, cmd_train_aed, cmd_train_lm, cmd_tune, run_pipeline, DecodeScore,
    Scales, ESTIMATORS,
};
pub use config::{derive_seed, ExperimentConfig, Overrides};
pub use layout::Layout;
pub use manifest::Manifest;
