use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("discriminative token counts tie at {0}; the majority label is undefined")]
    Tie(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at iteration {iter}: {what}")]
    Diverged { iter: usize, what: String },

    #[error("probe unsupported: {0}")]
    UnsupportedProbe(String),

    #[error("no boundary: {0}")]
    NoBoundary(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
