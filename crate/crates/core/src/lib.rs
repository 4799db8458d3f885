//! Prompt-conditioned unified source separation.
//!
//! This crate holds the pure algorithmic parts: STFT and resampling kernels,
//! the separation network with its backward pass, training losses and
//! metrics, on-the-fly mixture synthesis and the optimizer schedule. It only
//! needs `alloc`; file formats, checkpoints and the command line live in the
//! `tuss` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dsp;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod nn;
pub mod prompt;
pub mod real;
pub mod train;

pub use error::{Error, Result};
pub use model::{Baseline, FeatureGrid, ModelConfig, StackConfig, Tuss};
pub use prompt::{PromptCategory, PromptError, PromptSet};
pub use real::Real;
