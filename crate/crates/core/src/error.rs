use thiserror::Error;

/// Errors produced by the constellation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// An enumeration would exceed the configured size guard.
    #[error("capacity exceeded: {what} needs {needed} items, limit is {limit}")]
    Capacity {
        what: &'static str,
        needed: u128,
        limit: u128,
    },
    #[error("allocation has no phase bits")]
    EmptyPhase,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("solver failure after {iterations} iterations: {reason}")]
    SolverFailure {
        reason: String,
        iterations: usize,
        /// Best strictly feasible iterate (row-major amplitudes followed by `t`).
        best_feasible: Option<Vec<f64>>,
    },
    #[error("design failure: {0}")]
    DesignFailure(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
