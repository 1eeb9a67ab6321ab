use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0} is not positive definite (Cholesky factorization failed)")]
    NotPositiveDefinite(&'static str),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("objective became non-finite at APG iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dual optimization failed: {0}")]
    DualFailed(String),

    #[error("degenerate sample weights: effective sample size {ess:.3} below floor {floor}")]
    WeightDegeneracy { ess: f64, floor: f64 },

    #[error("ball at ({x:.3}, {y:.3}) is outside the camera frame")]
    OutOfFrame { x: f64, y: f64 },

    #[error("environment construction failed: {0}")]
    Environment(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("malformed {what} at line {line}: {reason}")]
    Format {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::Iteration { .. } => e,
            e => Error::Iteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}
