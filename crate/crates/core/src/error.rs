use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("graph contains a cycle")]
    Cyclic,

    #[error("rejection sampling gave up after {attempts} attempts; last violated constraint: {constraint}")]
    RejectionExhausted { attempts: usize, constraint: String },

    #[error("node {0} is a mediator between treatment and outcome; the total effect is not the direct edge")]
    Mediator(usize),

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("environment {env}: arm T={arm} has {rows} rows, at least {required} are needed")]
    InsufficientArm {
        env: usize,
        arm: u8,
        rows: usize,
        required: usize,
    },

    #[error("exhaustive search over d = {d} covariates would evaluate {subsets} subsets; pass a maximum subset size")]
    SearchTooLarge { d: usize, subsets: u128 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
