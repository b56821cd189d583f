use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("invalid factor `{name}`: {reason}")]
    InvalidFactor { name: String, reason: String },
    #[error("column `{0}` has no non-missing values")]
    EmptyColumn(String),
    #[error("column `{0}` is constant (zero range)")]
    ConstantColumn(String),
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("unknown level `{level}` for factor `{factor}`")]
    UnknownLevel { factor: String, level: String },
    #[error("value {value} outside [{low}, {high}] for factor `{factor}`")]
    OutOfRange {
        factor: String,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error("holdout size {n_holdout} must be in 1..{n}")]
    HoldoutRange { n_holdout: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("XᵀX is singular; use the regularized T² metric for this model")]
    SingularDesign,
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("non-finite training loss at boosting stage {0}")]
    NonFiniteLoss(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
