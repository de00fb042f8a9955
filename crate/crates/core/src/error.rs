use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-positive price on {0}")]
    NonPositivePrice(String),
    #[error("series share fewer than 2 common dates")]
    NoOverlap,
    #[error("series too short: need at least {needed} observations, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("matrix not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("covariance at t={t} not positive definite")]
    NotPositiveDefiniteAt { t: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("loss is not a scalar (shape {rows}x{cols})")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-positive variance at index {0}")]
    NonPositiveVariance(usize),
    #[error("degrees of freedom must exceed 2, got {0}")]
    DegreesOfFreedomTooSmall(f64),
    #[error("optimizer diverged: {0}")]
    OptimizerDiverged(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("need at least 3 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("need at least 5 non-zero paired differences, got {0}")]
    TooFewPairs(usize),
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("missing result for dataset '{dataset}', model '{model}'")]
    MissingCell { dataset: String, model: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
