//! Error type shared by all estimation modules.

use thiserror::Error;

/// Errors produced by data handling, model fitting, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is outside its domain (bad alpha, bad index,
    /// dimension mismatch, nonpositive variance parameter, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The input data violate a structural requirement (malformed CSV,
    /// failed validation, missing column).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// The requested model cannot be identified from the data
    /// (no censored observations, single treatment arm / separation).
    #[error("model not identifiable: {0}")]
    Unidentifiable(String),

    /// The optimizer exhausted its iteration budget. Carries the objective
    /// trace so callers can inspect the path.
    #[error(
        "optimization did not converge after {iterations} iterations \
         (last objective {last_objective:.6e}, gradient norm {grad_norm:.3e})"
    )]
    NoConvergence {
        iterations: usize,
        last_objective: f64,
        grad_norm: f64,
        trace: Vec<f64>,
    },

    /// A numerical operation failed (quadrature underflow, singular matrix,
    /// negative variance after symmetrization).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to:
    /// 1 = input/config, 2 = model/convergence, 3 = numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidData(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 1,
            Error::Unidentifiable(_) | Error::NoConvergence { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}
