use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// One or more invariants of a feature bank (or similar record) do not hold.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// A matrix or manifest file could not be decoded.
    #[error("format error in {}: {msg}", file.display())]
    Format { file: PathBuf, msg: String },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A model lacks something an operation needs (source head, bank, projection).
    #[error("model {model_id}: {what}")]
    Capability { model_id: String, what: String },

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("insufficient capacity: {0}")]
    Capacity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {msg}")]
    Training { step: usize, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(file: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { file: file.into(), msg: msg.into() }
    }
}
