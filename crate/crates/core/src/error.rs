use thiserror::Error;

use crate::likelihood::NewtonReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("level {0} is outside (0, 1)")]
    InvalidLevel(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },

    #[error("too few interior knots: {0}")]
    TooFewKnots(usize),

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("derivative order {order} exceeds spline degree {degree}")]
    OrderExceedsDegree { order: usize, degree: usize },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("threshold level tau = {0} is outside (0, 1)")]
    InvalidTau(f64),

    #[error("no observation exceeds the threshold")]
    NoExceedances,

    #[error("too few exceedances: {got} (need at least {need})")]
    TooFewExceedances { got: usize, need: usize },

    #[error("Newton iteration did not converge after {} iterations (gradient {:.3e})", .report.iterations, .report.grad_norm)]
    DidNotConverge { report: Box<NewtonReport>, best: Vec<f64> },

    #[error("line search failed in the index step")]
    LineSearchFailed,

    #[error("first coordinate of the index vector is not positive")]
    FirstCoordinateNotPositive,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("k = {k} is out of range for a sample of size {n}")]
    KOutOfRange { k: usize, n: usize },

    #[error("invalid extrapolation levels tau = {tau}, tau_e = {tau_e}")]
    InvalidLevels { tau: f64, tau_e: f64 },

    #[error("every tuning grid cell failed")]
    AllCellsFailed,
}
