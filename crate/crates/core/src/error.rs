use thiserror::Error;

/// A located problem in a model specification source.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{col}: {message}")]
pub struct SpecError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl SpecError {
    pub(crate) fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        SpecError {
            line,
            col,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum AsmError {
    #[error(transparent)]
    Spec(#[from] SpecError),

    #[error("model is not identified: {0}")]
    Identification(String),

    #[error("equality class {label} holds conflicting fixed values {first} and {second}")]
    FixedConflict { label: String, first: f64, second: f64 },

    #[error("{what}: expected length {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("{free} free parameters exceed {moments} sample moments")]
    Underidentified { free: usize, moments: usize },

    #[error("coefficient matrix is not strictly lower-triangular at ({row}, {col})")]
    Triangularity { row: usize, col: usize },

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("data: {0}")]
    Data(String),

    #[error("fit did not converge after {iterations} iterations (max |gradient| {gradient:.3e})")]
    NotConverged { iterations: usize, gradient: f64 },

    #[error("models are not nested: {0}")]
    NonNested(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = AsmError> = std::result::Result<T, E>;
