use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("motility evaluated at s = {s} below its floor {floor}")]
    BelowFloor { s: f64, floor: f64 },

    #[error("{0} is not supported for this motility family")]
    Unsupported(&'static str),

    #[error("motility has no anchor; call choose_anchor first")]
    NoAnchor,

    #[error("no anchor with gamma(a) <= {target} below s = {ceiling}; the motility does not vanish fast enough")]
    AnchorNotFound { target: f64, ceiling: f64 },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("positivity violated in `{field}` at step {step}: min = {min:e}")]
    Positivity {
        field: &'static str,
        step: usize,
        min: f64,
    },

    #[error("non-finite value in field after {0}")]
    NonFinite(&'static str),

    #[error("grid too coarse: {cells:.2} cells inside the concentration radius, need at least {required}")]
    Resolution { cells: f64, required: usize },

    #[error("normalisation constant a = {a} outside [{lower}, {upper}] beyond 1%")]
    Bracket { a: f64, lower: f64, upper: f64 },

    #[error("mass {mass} is within 1e-3 of the quantised value {quantum}")]
    Quantization { mass: f64, quantum: f64 },

    #[error("fixed-point iteration stalled after {iterations} iterations, residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("insufficient diagnostics: {0}")]
    InsufficientData(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config validation failed for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
