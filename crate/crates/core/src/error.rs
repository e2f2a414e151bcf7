//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's input was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An experiment or module configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// The finite-difference oracle could not evaluate a loss.
    #[error("gradient oracle failure: {0}")]
    OracleFailure(String),

    /// A training loss became non-finite; the run is aborted.
    #[error("non-finite loss: {0}")]
    NonFinite(String),

    /// Filesystem access failed.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A persisted artifact (snapshot, JSONL record, lexicon) is malformed.
    #[error("{path}: {message}")]
    Persistence { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn persistence(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Persistence {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
