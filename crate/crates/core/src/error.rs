use thiserror::Error;

/// Errors raised by model construction and the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An exact enumeration would need more states than allowed.
    #[error("exact enumeration needs {required} states, cap is {cap}")]
    Capacity { required: u128, cap: u128 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Optimizer failed; carries the best iterate seen (row-major, as f64).
    #[error("optimizer did not converge: {message} (best value {best_value})")]
    NonConvergence {
        message: String,
        best_value: f64,
        best_point: Vec<f64>,
    },

    #[error("condition not met: {0}")]
    ConditionNotMet(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
