use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: {field}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] iclorder_core::Error),
    #[error("verification failed for {}", .0.join(", "))]
    VerificationMismatch(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Problems the user can fix by editing flags, config or paths.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Parse { .. } | Error::Schema { .. } | Error::Config(_) => true,
            Error::Core(e) => matches!(
                e,
                iclorder_core::Error::CapExceeded { .. }
                    | iclorder_core::Error::Template(_)
                    | iclorder_core::Error::InvalidTask(_)
                    | iclorder_core::Error::InvalidOrdering(_)
                    | iclorder_core::Error::EmptyGold
            ),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
