use alloc::string::String;

use crate::prompt::PromptError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("invalid STFT configuration: {0}")]
    InvalidStftConfig(String),
    #[error("window/hop pair violates the overlap-add condition: {0}")]
    OverlapAdd(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("band widths must sum to F (widths sum to {sum}, F = {bins})")]
    BandWidths { sum: usize, bins: usize },
    #[error("sample rate must be positive, got {0}")]
    InvalidRate(i64),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFiniteStage(String),
    #[error("reference is identically zero; use zero_aware_snr_loss for silent references")]
    ZeroReference,
    #[error("zero estimate after mean removal")]
    ZeroEstimate,
    #[error("inconsistent category grouping: {0}")]
    Grouping(String),
    #[error("unknown metric convention `{0}`")]
    UnknownConvention(String),
    #[error("zero mixture with zero reference")]
    SilentMixture,
    #[error("no records available for category {0}")]
    NoRecords(&'static str),
    #[error("source unavailable: {0}")]
    Source(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
}
