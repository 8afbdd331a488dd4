//! Crate-wide error type. Soft convergence failures carry their logs so
//! callers can report them; hard bound violations are separate variants so
//! the CLI can map them to distinct exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("basis is numerically dependent: volume {volume:.3e} below threshold {threshold:.3e}")]
    DependentBasis { volume: f64, threshold: f64 },

    #[error("linear program failed: {0}")]
    LpFailure(String),

    #[error("filtration level {level} unresolved: singular gap {gap:.3e} below {gap_min:.3e}")]
    UnresolvedLevel { level: usize, gap: f64, gap_min: f64 },

    #[error("{what} did not converge after {steps} steps (last residual {last:.3e})")]
    Unconverged {
        what: String,
        steps: usize,
        last: f64,
        log: Vec<(usize, f64)>,
    },

    #[error("{what}: value {value:.6e} violates bound {bound:.6e}")]
    BoundViolated { what: String, value: f64, bound: f64 },

    #[error("restricted inverse: image misses target subspace by {delta:.3e} (tol {tol:.3e})")]
    ImageMismatch { delta: f64, tol: f64 },

    #[error("admissible radius is not positive ({value:.3e}): contraction constants give no workable neighborhood")]
    EmptyRadius { value: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Soft failures mean "ran out of patience, result undecided"; everything
    /// else is a hard failure of a stated bound or contract.
    pub fn is_soft(&self) -> bool {
        matches!(
            self,
            Error::Unconverged { .. } | Error::UnresolvedLevel { .. }
        )
    }
}
