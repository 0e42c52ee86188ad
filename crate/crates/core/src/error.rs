use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid settings or parameters (bad divisibility, out-of-range thresholds, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (length mismatch, empty range).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// A persisted file is truncated, mis-sized, or structurally inconsistent.
    #[error("integrity error in {file}: {reason}")]
    Integrity { file: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn integrity(file: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Integrity {
            file: file.into(),
            reason: reason.into(),
        }
    }
}
