use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown method `{name}`; valid methods: {valid}")]
    UnknownMethod { name: String, valid: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tuning failed for every candidate of `{family}`: {failures}")]
    TuningFailed { family: String, failures: String },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Core(#[from] idens_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
