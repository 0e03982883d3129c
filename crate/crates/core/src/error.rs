use thiserror::Error;

use crate::fitting::FitResult;
use crate::oracle::OracleResult;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// The antisymmetric pair state does not exist at vanishing relative momentum.
    #[error("degenerate triplet channel: p_tilde/sigma = {ratio:e} is below {threshold:e}")]
    DegenerateChannel { ratio: f64, threshold: f64 },

    #[error("grid point {index}: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),

    /// Carries the best estimate obtained within the sample budget.
    #[error("tolerance not met: value {:e} with est_error {:e} after {} samples", .0.value, .0.est_error, .0.samples_used)]
    ToleranceNotMet(OracleResult),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient sensitivity: {0}")]
    InsufficientSensitivity(String),

    #[error("no multistart converged (best objective {:e})", .0.objective)]
    NonConvergence(Box<FitResult>),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {v}")))
    }
}
