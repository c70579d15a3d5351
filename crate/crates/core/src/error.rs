use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("record `{id}`: {message}")]
    Inconsistent { id: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad numbers rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
