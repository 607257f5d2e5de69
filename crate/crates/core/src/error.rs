use std::path::PathBuf;

/// Errors raised by environments, agents, solvers and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("arm set is empty")]
    EmptyArmSet,

    #[error("index {index} out of range for {len} arms")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("covering net would hold about {estimated:.3e} elements, above the cap of {cap}")]
    NetCapExceeded { estimated: f64, cap: usize },

    #[error("covering net is empty")]
    EmptyNet,

    #[error(
        "proximal gradient diverged at iteration {iteration} (step {step:e}); use a smaller step"
    )]
    Divergence { iteration: usize, step: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("call out of order: {0}")]
    OutOfOrder(&'static str),

    #[error("infeasible at this scale: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
