use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("dataset `{dataset}` has {available} texts, need {needed}")]
    InsufficientPool {
        dataset: String,
        available: usize,
        needed: usize,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("empty reference")]
    EmptyReference,

    #[error("label `{label}` has {count} records, need at least {k}")]
    TooFewRecords {
        label: String,
        count: usize,
        k: usize,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("http server: {0}")]
    Server(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    /// True for failures caused by the environment (files, sockets) rather
    /// than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Server(_))
    }
}
