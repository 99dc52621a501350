use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("integrity error: {message} (ids: {ids:?})")]
    Integrity { message: String, ids: Vec<u64> },

    #[error("transport error talking to {backend}: {message}")]
    Transport { backend: String, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend {backend} rejected request: {message}")]
    Backend { backend: String, message: String },

    #[error("invalid distribution: row {row} {reason}")]
    InvalidDistribution { row: usize, reason: String },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("output collision: {0} already exists (pass resume to continue an earlier run)")]
    OutputCollision(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("batch failed for request indices {failed:?}")]
    Batch { failed: Vec<usize> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport failures are the only class worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
