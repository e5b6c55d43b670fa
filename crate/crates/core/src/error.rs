use thiserror::Error;

/// Errors raised by instance construction, oracles and the experiment harness.
#[derive(Debug, Error)]
pub enum ClbError {
    #[error("construction is empty: k = {k} < 1 at n = {n}; {remedy}")]
    EmptyConstruction { n: u64, k: u64, min_n: Option<u64>, remedy: String },

    #[error(
        "schedule violates rho*(1+alpha)*ln n + 2*beta < gamma: lhs = {lhs:.6e}, gamma = {gamma:.6e}"
    )]
    SingleStepInequality { lhs: f64, gamma: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("query point has norm {norm:.17e} > R = {radius}")]
    OutsideDomain { norm: f64, radius: f64 },

    #[error("dense size {size} exceeds the limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("budget violation: {0}")]
    Budget(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ClbError>;
