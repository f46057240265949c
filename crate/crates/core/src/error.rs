use thiserror::Error;

/// Errors raised by the discretization, solvers and design optimizer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh resolution nx={nx}: {reason}")]
    InvalidMesh { nx: usize, reason: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("factorization of {matrix} failed at pivot {pivot}")]
    Factorization { matrix: &'static str, pivot: usize },

    #[error("non-finite value in time stepping at step {step}")]
    NonFinite { step: usize },

    #[error("eigensolver did not converge ({0})")]
    Eigen(String),

    #[error("Gram solve failed for frequency {k}, basis vector {j}: {source}")]
    Gram {
        k: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
