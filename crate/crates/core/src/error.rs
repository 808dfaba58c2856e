use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GbfsError>;

#[derive(Debug, Error)]
pub enum GbfsError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: row {row}: label {value:?} is not one of 0, 1, -1, +1")]
    InvalidLabel {
        path: PathBuf,
        row: usize,
        value: String,
    },

    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}: {message}")]
    Libsvm {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("feature index {feature} out of range for {n_features} features")]
    FeatureOutOfRange { feature: usize, n_features: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bag assignment: {0}")]
    Bags(String),

    #[error("cost table: {0}")]
    CostTable(String),

    #[error("non-finite margin at iteration {iteration} (sample {sample})")]
    NonFiniteMargin { iteration: usize, sample: usize },

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("model invariant violated: {0}")]
    InvalidModel(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl GbfsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GbfsError::Io {
            path: path.into(),
            source,
        }
    }
}
