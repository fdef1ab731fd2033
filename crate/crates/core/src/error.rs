use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument: shape or channel mismatch, out-of-range value.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed checkpoint; `offset` is the byte position where decoding failed.
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("image codec error in {}: {message}", path.display())]
    Codec { path: PathBuf, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
