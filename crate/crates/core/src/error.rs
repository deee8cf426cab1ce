//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("imbalance lambda is zero; use the balanced (logistic) branch")]
    ZeroLambda,

    #[error("degenerate denominator in the initial-condition constant ({value:e})")]
    DegenerateDenominator { value: f64 },

    #[error("domain error in {what}: argument {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("threshold unreachable from this initialisation (log argument {value})")]
    NegativeLogArgument { value: f64 },

    #[error("negative imbalance {lambda} not supported by the hyperbolic parameterisation")]
    NegativeLambda { lambda: f64 },

    #[error("simulation diverged at step {step} (value {value})")]
    Divergence { step: usize, value: f64 },

    #[error("integration unstable: {what} = {value} at time {time}")]
    Instability {
        what: &'static str,
        value: f64,
        time: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("entropy undefined for an all-zero {what}")]
    AllZero { what: &'static str },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
