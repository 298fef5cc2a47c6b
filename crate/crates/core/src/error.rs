use thiserror::Error;

/// Errors shared across the graph, model, spectral and engine layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix family is empty")]
    EmptyFamily,

    #[error("size cap exceeded: {0}")]
    SizeCapExceeded(String),

    #[error("assumption {0} does not hold")]
    AssumptionFailed(&'static str),

    #[error("degenerate family: eigenvalue 1 of E[K (x) K] is not simple")]
    DegenerateFamily,

    #[error("non-finite matrix entry at ({0}, {1})")]
    NonFiniteEntry(usize, usize),

    #[error("invalid family description: {0}")]
    InvalidFamily(String),

    #[error("regression window contains non-positive values")]
    NonPositiveInWindow,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
