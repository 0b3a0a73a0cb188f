use thiserror::Error;

/// Errors raised by the erasure toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid kernel specification: {0}")]
    InvalidKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Nystrom rank collapsed to zero (largest eigenvalue {largest:e})")]
    RankCollapse { largest: f64 },

    #[error("degenerate concept direction: alpha^T K alpha = {0:e}")]
    DegenerateDirection(f64),

    #[error("exact game oracle limited to {limit} anchors, got {got}")]
    SizeGate { limit: usize, got: usize },

    #[error("Fantope projection did not converge (residual {residual:e})")]
    FantopeNonConvergence { residual: f64 },

    #[error("optimization diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("empty {0}")]
    Empty(String),

    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(&'static str),

    #[error("kernel adversary limited to {cap} training points, got {got}")]
    CapExceeded { cap: usize, got: usize },

    #[error("word not in vocabulary: {0}")]
    MissingWord(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("container format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
