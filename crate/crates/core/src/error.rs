use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },
    #[error("data not linearly separable: {0}")]
    Infeasible(String),
    #[error("degenerate probe half: {0}; try another seed")]
    DegenerateHalf(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("index {index} out of range for {len} examples")]
    Index { index: usize, len: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
