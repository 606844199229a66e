//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} must be symmetric positive definite")]
    NotSpd { what: &'static str },

    #[error("barrier '{label}' is non-positive (h = {value:.6e}): state outside the safe set")]
    OutsideSafeSet { label: String, value: f64 },

    #[error("estimate norm {norm:.6e} exceeds the parameter bound {limit:.6e}")]
    EstimateOutsideBall { norm: f64, limit: f64 },

    #[error("problem exceeds the QP solver envelope: {0}")]
    Envelope(String),

    #[error("safety violation at t = {t:.4} s: barrier '{label}' reached h = {value:.6e}")]
    SafetyViolation { t: f64, label: String, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
