use thiserror::Error;

/// Errors surfaced by model fitting, estimation, and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive or non-finite rate: {0} bits")]
    InvalidRate(f64),

    #[error("quality level {q} outside [0, {max}]")]
    QualityOutOfRange { q: f64, max: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined score: {0}")]
    UndefinedScore(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
