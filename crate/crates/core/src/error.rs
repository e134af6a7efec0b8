use std::path::PathBuf;

/// Errors surfaced by the driving stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown actor id {0}")]
    UnknownActor(u32),
    #[error("invalid action for actor {id}: {reason}")]
    InvalidAction { id: u32, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("pose ({x:.2}, {y:.2}) is outside the feature grid")]
    PoseOutsideGrid { x: f64, y: f64 },
    #[error("unknown high-level command {0:?}")]
    UnknownCommand(String),
    #[error("road map is disconnected")]
    DisconnectedMap,
    #[error("no route of the requested length: {0}")]
    NoRoute(String),
    #[error("covariance is not symmetric positive semi-definite")]
    NotPsd,
    #[error("checkpoint not found: {}", .0.display())]
    CheckpointNotFound(PathBuf),
    #[error("input not found: {}", .0.display())]
    InputNotFound(PathBuf),
    #[error("model is not trained: {0}")]
    Untrained(String),
    #[error("config: {0}")]
    Config(String),
    #[error("encoding: {0}")]
    Encoding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Encoding(e.to_string())
    }
}
