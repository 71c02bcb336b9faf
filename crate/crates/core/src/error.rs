use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {index} has invalid weight {weight}")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("duplicate vertex id `{0}`")]
    DuplicateVertex(String),

    #[error("unknown vertex id `{0}`")]
    UnknownVertex(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("pagerank did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no valid records ({skipped} lines skipped)")]
    NoRecords { skipped: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("exposure overflow at hop {hop}")]
    ExposureOverflow { hop: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("singular design (condition number {condition:e}); deficient directions: {directions}")]
    SingularDesign { condition: f64, directions: String },

    #[error("non-finite log posterior at initialization after {0} attempts")]
    Initialization(usize),

    #[error("empty posterior sample")]
    EmptyPosterior,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
