use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id `{0}`")]
    DuplicateDoc(String),

    #[error("unknown document id `{0}`")]
    UnknownDoc(String),

    #[error("negative sampling shortfall: wanted {wanted} negatives, only {available} retrievable")]
    Shortfall { wanted: usize, available: usize },

    #[error("feedback documents contain no tokens")]
    EmptyFeedback,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("groups missing from rankings: {}", .0.join(", "))]
    MissingGroups(Vec<String>),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss {value} at batch {batch}")]
    NonFiniteLoss { batch: usize, value: f64 },

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}
