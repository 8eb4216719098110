use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} is outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("integer overflow while computing {0}")]
    Overflow(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// Quadrature could not meet the requested tolerance.
    #[error("quadrature accuracy {achieved:e} does not meet requested tolerance {requested:e} (order {order})")]
    Accuracy {
        achieved: f64,
        requested: f64,
        order: usize,
    },

    #[error("kernel coefficient validation failed at index {index}: {reason}")]
    Validation { index: usize, reason: String },

    #[error("singular Newton linearization at lambda = {lambda} (pivot ratio {pivot_ratio:e}); perturb lambda away from the critical value")]
    SingularLinearization { lambda: f64, pivot_ratio: f64 },

    #[error("no convergence at lambda = {lambda}: residual {residual:e} after {iterations} iterations")]
    NotConverged {
        lambda: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("degenerate index at lambda = {lambda}: relative determinant {relative_det:e}")]
    DegenerateIndex { lambda: f64, relative_det: f64 },

    #[error("critical value undefined at index {index}: k = {coeff}")]
    UndefinedCriticalValue { index: usize, coeff: f64 },

    #[error("uniqueness threshold undefined: {0}")]
    ThresholdUndefined(String),

    #[error("lambda = {lambda} lies within {rel_gap:e} (relative) of critical value lambda_{index}")]
    NearCritical { lambda: f64, index: usize, rel_gap: f64 },

    #[error("inconclusive degree audit at lambda = {lambda}: {detail}")]
    InconclusiveAudit { lambda: f64, detail: String },

    #[error("no nontrivial branch found bifurcating from mode {mode}")]
    BranchNotFound { mode: usize },

    #[error("marginal stability: probe growth rate {rate:e}")]
    MarginalStability { rate: f64 },

    #[error("time step {dt:e} exceeds stability limit {limit:e}")]
    StepSize { dt: f64, limit: f64 },

    #[error("grid resolution {points} below minimum {min}")]
    Resolution { points: usize, min: usize },

    #[error("density diverged after t = {time}")]
    Divergence { time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
