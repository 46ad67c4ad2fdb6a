//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by loaders, training, and model I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying file I/O failure.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is 1-based.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A caller-visible precondition was violated (label domain, empty
    /// dataset, bad parameter value).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An internal API contract was violated (symbol overflow, index out of
    /// range, mismatched histogram shapes).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Model file does not match the expected schema or version.
    #[error("model schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
