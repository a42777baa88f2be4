use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("non-finite value in input")]
    NonFinite,

    #[error("sample batch is empty")]
    EmptyBatch,

    #[error("samples are degenerate: moment matrix is singular at degree {degree}")]
    DegenerateSamples { degree: usize },

    #[error("operation not supported for the {0} basis family")]
    UnsupportedFamily(&'static str),

    #[error("operation requires a {expected} process")]
    WrongProcessTag { expected: &'static str },

    #[error("preconditioner is not admissible (min quotient {min_quotient:e} at gamma {gamma})")]
    NotAdmissible { gamma: f64, min_quotient: f64 },

    #[error("update at step {step} produced a non-finite coefficient")]
    NonFiniteUpdate { step: usize },

    #[error("oracle coefficient vector has zero norm")]
    ZeroOracle,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
