pub mod cli;
pub mod codebook;
pub mod config;
pub mod diagnostics;
pub mod diff;
pub mod error;
pub mod manifold;
pub mod matching;
pub mod motion;
pub mod synth;
pub mod vqpae;

pub use error::{Error, Result};
