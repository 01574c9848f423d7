use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid potential: V({x}) = {value} at node {index}")]
    InvalidPotential { index: usize, x: f64, value: f64 },

    #[error("numeric failure in {what} after {iterations} iterations (residual {residual:e})")]
    NumericFailure {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("point {x} lies outside the numerical support: {detail}")]
    Support { x: f64, detail: String },

    #[error("invalid energy: non-finite value {value} at node {node}")]
    InvalidEnergy { node: usize, value: f64 },

    #[error("singular kernel: {0}")]
    SingularKernel(String),

    #[error("unbounded tail: {0}")]
    UnboundedTail(String),

    #[error("splice length {tau} is not a multiple of the interval length {b}")]
    Alignment { tau: f64, b: f64 },

    #[error("path has {got} nodes of dimension {got_dim}, expected {expected} of dimension {expected_dim}")]
    PathMismatch {
        expected: usize,
        expected_dim: usize,
        got: usize,
        got_dim: usize,
    },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("estimation refused: {0}")]
    Estimation(String),

    #[error("cached log-density drifted at step {step}: cached {cached}, recomputed {fresh}")]
    Revalidation { step: u64, cached: f64, fresh: f64 },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("kernel table: {0}")]
    KernelTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
