use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate ROI: {0}")]
    DegenerateRoi(String),

    #[error("non-finite objective at pyramid level {level}, iteration {iteration}")]
    NumericalFailure { level: usize, iteration: usize },

    #[error("{path}: {kind}")]
    Parse { path: PathBuf, kind: ParseError },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Reasons a frame file pair can be rejected.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("magic mismatch: expected \"USEF1\", found {found:?}")]
    MagicMismatch { found: String },

    #[error("unsupported {field}: {found:?}")]
    Unsupported { field: &'static str, found: String },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("non-finite value at byte offset {offset}")]
    NonFinite { offset: usize },

    #[error("header invariant violated: {0}")]
    Invariant(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("unexpected kind: wanted {expected}, file holds {found}")]
    WrongKind { expected: String, found: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, kind: ParseError) -> Self {
        Error::Parse { path: path.into(), kind }
    }
}
