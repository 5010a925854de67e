use curvalloc::Error;
use thiserror::Error as ThisError;

/// A command failure, classified by exit status.
#[derive(Debug, ThisError)]
pub enum CliError {
    /// Unreadable input, malformed document, invalid flag, mismatched structure.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("layer {layer}: H + tau*I is not positive definite")]
    NotPositiveDefinite { layer: String },
    /// A re-loaded plan fails its optimality check.
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::NotPositiveDefinite { .. } => 5,
            CliError::Check(_) => 1,
        }
    }

    pub fn from_core(e: Error) -> Self {
        match e {
            Error::MaxIterExceeded { .. } | Error::NoConvergence { .. } | Error::Degenerate(_) => {
                CliError::Solver(e.to_string())
            }
            Error::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            Error::NotPositiveDefinite => CliError::NotPositiveDefinite { layer: "?".into() },
            other => CliError::Validation(other.to_string()),
        }
    }
}
