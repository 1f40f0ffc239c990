use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed binary or text input. `offset` is the byte offset where
    /// parsing failed.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Well-formed input whose content violates a data invariant.
    #[error("data error: {0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("manifest mismatch: {}", .0.join("; "))]
    ManifestMismatch(Vec<String>),

    #[error("fold {fold}, alpha {alpha}: {source}")]
    Fold {
        fold: usize,
        alpha: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 data, 2 format, 3 usage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } => 2,
            Error::Usage(_) => 3,
            Error::Fold { source, .. } => source.exit_code(),
            Error::Data(_) | Error::Io { .. } | Error::Numeric(_) | Error::ManifestMismatch(_) => 1,
        }
    }
}
