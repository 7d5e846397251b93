use thiserror::Error;

/// Errors produced by the simulator, reward and training code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing constraint for agent {agent}: {source_name}")]
    MissingConstraint { agent: usize, source_name: String },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("could not place vehicle {agent} after {attempts} attempts")]
    SpawnFailed { agent: usize, attempts: usize },
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
