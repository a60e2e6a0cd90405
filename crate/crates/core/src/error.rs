use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training stack.
#[derive(Debug, Error)]
pub enum CovrError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {what} (index {index})")]
    NonFinite { what: String, index: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("empty effective batch: every sample has zero weight")]
    EmptyEffectiveBatch,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed {format}: {message}")]
    Format { format: String, message: String },

    #[error("training aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        #[source]
        source: Box<CovrError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CovrError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CovrError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn dimension(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        CovrError::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn non_finite(what: impl Into<String>, index: usize) -> Self {
        CovrError::NonFinite {
            what: what.into(),
            index,
        }
    }

    pub fn format(format: impl Into<String>, message: impl Into<String>) -> Self {
        CovrError::Format {
            format: format.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CovrError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CovrError> = std::result::Result<T, E>;
