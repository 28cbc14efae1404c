use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing or invalid field `{field}`")]
    Schema { line: usize, field: String },

    #[error("integrity: {0}")]
    Integrity(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("construction: {0}")]
    Construction(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("no attribution: {0}")]
    NoAttribution(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

/// Coarse error classes, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Construction,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Domain(_) => ErrorKind::Usage,
            Error::Construction(_) => ErrorKind::Construction,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
