use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology spec: {0}")]
    InvalidSpec(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate rate configuration")]
    DegenerateRates,

    #[error("network has {n} nodes, exact recursion is capped at {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    Singular { jitter: f64 },

    #[error("evaluator failed at iteration {iteration}: {message}")]
    Evaluator { iteration: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed user input rather than numerics.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Json(e) => !e.is_io(),
            other => matches!(
                other,
                Error::Config(_)
                    | Error::InvalidSpec(_)
                    | Error::InvalidArgument(_)
                    | Error::DimensionMismatch { .. }
                    | Error::TooLarge { .. }
            ),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
