use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed hunk header at byte offset {offset}: {line:?}")]
    DiffParse { offset: usize, line: String },

    #[error("line {line}: {message}")]
    DatasetLine { line: usize, message: String },

    #[error("duplicate record id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("invalid record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("not enough negatives to balance: {positives} positives but only {negatives} negatives; collect more non-patch commits")]
    InsufficientNegatives { positives: usize, negatives: usize },

    #[error("cannot build {k} folds from {repos} repositories with positive records")]
    TooFewRepositories { k: usize, repos: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("shape mismatch in {operand}: expected {expected}, got {actual}")]
    Shape {
        operand: &'static str,
        expected: String,
        actual: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint config mismatch on field `{field}`: file has {found}, expected {expected}")]
    ConfigMismatch {
        field: String,
        found: String,
        expected: String,
    },

    #[error("training: {0}")]
    Training(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

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
}
