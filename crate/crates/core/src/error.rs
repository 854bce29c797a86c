use std::path::PathBuf;

use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter vector has length {actual}, architecture needs {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite parameter at index {index}")]
    NonFiniteParameter { index: usize },

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    TrainingFailure { iteration: usize, reason: String },

    #[error("sampler failure: {0}")]
    SamplerFailure(String),

    #[error("volume estimate has no hits at epsilon = {epsilon:e}; increase mc_samples")]
    ResolutionFailure { epsilon: f64 },

    #[error("malformed checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config error in {path} at line {line}, column {column}: {message}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
