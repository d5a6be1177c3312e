use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cannot normalize utterance {utterance:?}: {message}")]
    Normalize { utterance: String, message: String },

    #[error("bundle format error: {0}")]
    Format(String),

    #[error("truncated bundle: expected at least {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("width mismatch: model expects {expected} features, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("cannot split: {0}")]
    Split(String),

    #[error("training failed for C={c}: {source}")]
    Training { c: f64, source: Box<Error> },

    #[error("subject {subject}: {message}")]
    Subject { subject: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn subject(subject: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Subject {
            subject: subject.into(),
            message: err.to_string(),
        }
    }
}
