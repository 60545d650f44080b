//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A probe point, ball or ellipsoid left the admissible part of the
    /// domain. Operations fail loudly rather than extrapolate.
    #[error("out of domain: {context} (point {point:?})")]
    OutOfDomain { point: [f64; 3], context: String },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("phase violation: {0}")]
    PhaseViolation(String),

    #[error(
        "invalid competitor: boundary trace deviates by {max_deviation:e} (allowed {allowed:e})"
    )]
    InvalidCompetitor { max_deviation: f64, allowed: f64 },

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    Convergence { residual: f64, iterations: usize },

    #[error("solver failure: energy increased over {} consecutive accepted steps", trace.len())]
    SolverFailure { trace: Vec<f64> },

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
