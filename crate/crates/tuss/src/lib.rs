//! Runtime around `tuss-core`: WAV and manifest IO, checkpoints, run
//! configuration, the training driver, evaluation and the `tuss` binary.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod presets;
pub mod trainer;
pub mod wav;

pub use error::{Error, Result};
