use std::path::PathBuf;

use thiserror::Error;

use crate::compressor::Level;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("cache i/o error for chunk {chunk} ({level:?}) at {path}: {source}")]
    CacheIo {
        chunk: usize,
        level: Level,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("resource error: {0}")]
    Resource(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Precondition(_) => 2,
            Error::Integrity(_) => 3,
            Error::CacheIo { .. } | Error::Io(_) | Error::Resource(_) => 4,
        }
    }
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}

pub(crate) fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
