//! Error type shared across the toolkit.

use thiserror::Error;

/// Unified error for all toolkit operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A parameter value is outside its admissible set.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An input fell outside the domain of validity of a nonlinearity.
    #[error("domain error at feature {feature}: {message}")]
    Domain { feature: usize, message: String },

    /// A matrix lacks required structure (rank, tallness, null space).
    #[error("structure error: {0}")]
    Structure(String),

    /// A documented precondition of the operation does not hold.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// Malformed caller input (infeasible start, mismatched shapes, empty data).
    #[error("input error: {0}")]
    Input(String),

    /// Text input could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A numerical procedure produced non-finite values or failed to factorize.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Every optimization start failed; message carries per-start diagnostics.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::SolverFailure(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
