use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("all gains are zero; scores cannot be normalized")]
    AllZero,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("H + tau*I is not positive definite")]
    NotPositiveDefinite,

    #[error("index {index} out of range for {len} layers")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("bisection did not reach tolerance in {iterations} iterations (bracket [{lo}, {hi}], residual {residual})")]
    MaxIterExceeded {
        iterations: usize,
        lo: f64,
        hi: f64,
        residual: f64,
    },

    #[error("sparsity target {target} exceeds the achievable maximum {max}")]
    Infeasible { target: f64, max: f64 },

    #[error("oracle did not converge after {iterations} iterations (projected gradient norm {pg_norm})")]
    NoConvergence { iterations: usize, pg_norm: f64 },

    #[error("degenerate curvature constants: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}
