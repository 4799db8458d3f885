use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] tuss_core::Error),
    #[error(transparent)]
    Prompt(#[from] tuss_core::PromptError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Wav { path: PathBuf, source: hound::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("epoch {epoch}, step {step}: {source}")]
    Training { epoch: usize, step: u64, source: Box<Error> },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the error is a rejected prompt list or configuration, as
    /// opposed to a runtime failure.
    pub fn is_invalid_input(&self) -> bool {
        match self {
            Error::Prompt(_) | Error::Config { .. } | Error::Usage(_) => true,
            Error::Core(e) => matches!(e, tuss_core::Error::Prompt(_) | tuss_core::Error::InvalidConfig(_)),
            Error::Training { source, .. } => source.is_invalid_input(),
            _ => false,
        }
    }
}
