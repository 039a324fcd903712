//! Internal language model estimation and subtraction for attention
//! encoder-decoder models, at desk scale.

pub mod data;
pub mod error;
pub mod fusion;
pub mod ilm;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};
