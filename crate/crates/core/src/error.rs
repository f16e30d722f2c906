use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the model pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed mesh file: {0}")]
    Parse(String),

    #[error("invalid mesh: {0}")]
    Validation(String),

    #[error("degenerate triangle {triangle} (area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("mesh resolution too fine: {nodes} nodes exceeds cap of {cap}")]
    Resolution { nodes: usize, cap: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("index {index} out of range (valid range 0..{len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),

    #[error("matrix is not positive definite (pivot at original index {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("location ({x}, {y}) lies outside the mesh")]
    OutsideMesh { x: f64, y: f64 },

    #[error("spline fit needs at least {needed} distinct abscissae, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("x = {x} is outside the spline knot range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("calibration infeasible: ratio - t has no sign change on [{lo}, {hi}] (ratios {ratio_lo}, {ratio_hi})")]
    NoBracket {
        lo: f64,
        hi: f64,
        ratio_lo: f64,
        ratio_hi: f64,
    },

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a bug.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Internal(_) | Error::NotPositiveDefinite { .. })
    }
}
