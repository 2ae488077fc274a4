use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a value-level invariant (non-finite values, out of range
    /// probabilities).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Arguments are inconsistent with each other (shape or channel mismatch, bad K).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A binary file could not be decoded.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// A structured file or directory was decoded but failed validation.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// Operation called on a state that was never initialized.
    #[error("state error: {0}")]
    State(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid_arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
