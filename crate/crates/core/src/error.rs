use std::fmt;

use thiserror::Error;

/// One problem found while validating a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

/// Errors raised by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric: |M[{row}][{col}] - M[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not positive definite (eigenvalues in [{min_eig:e}, {max_eig:e}])")]
    NotPositiveDefinite { min_eig: f64, max_eig: f64 },

    #[error("eigenvalue {eig:e} outside declared bounds [{v_min:e}, {v_max:e}]")]
    BoundsViolation { eig: f64, v_min: f64, v_max: f64 },

    #[error("root finder did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("point lies outside the domain of g")]
    DomainViolation,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("batch of size {b} cannot be drawn without replacement from {n} components")]
    BatchTooLarge { b: usize, n: usize },

    #[error("operation requires an exact oracle")]
    InexactOracle,

    #[error("cannot enumerate all batches for n = {n} (limit {limit})")]
    EnumerationTooLarge { n: usize, limit: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("invalid configuration: {}", join_issues(.0))]
    InvalidConfig(Vec<ConfigIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::BoundsViolation { .. } => "bounds_violation",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Unsupported(_) => "unsupported",
            Error::DomainViolation => "domain_violation",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyBatch => "empty_batch",
            Error::BatchTooLarge { .. } => "batch_too_large",
            Error::InexactOracle => "inexact_oracle",
            Error::EnumerationTooLarge { .. } => "enumeration_too_large",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
