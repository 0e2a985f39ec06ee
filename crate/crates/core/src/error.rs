use thiserror::Error;

#[derive(Debug, Error)]
pub enum GreedyError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero vector where a nonzero element is required")]
    ZeroVector,

    #[error("zero functional: no dictionary element has a nonzero value")]
    ZeroFunctional,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("empty dictionary")]
    EmptyDictionary,

    #[error("combinatorial guard exceeded: {count} subsets > limit {limit}")]
    GuardExceeded { count: u128, limit: u128 },

    #[error("solver did not converge after {iterations} iterations (kkt violation {kkt:e})")]
    NonConvergence { iterations: usize, kkt: f64 },

    #[error("operation requires p = 2, got p = {p}")]
    RequiresHilbert { p: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GreedyError {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        GreedyError::InvalidParameter { name: name.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, GreedyError>;
