use std::path::PathBuf;

use salf_core::SalfError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected {expected} bytes ({detail}), found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
        detail: String,
    },
    #[error("unsupported container version {found:?} (expected {expected:?})")]
    UnknownVersion { found: String, expected: String },
    #[error("{path}: record {record} has a non-finite {field}")]
    NonFinite { path: PathBuf, record: usize, field: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] SalfError),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> IoError {
    let path = path.into();
    move |source| IoError::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> IoError {
    let path = path.into();
    move |source| IoError::Json { path, source }
}
