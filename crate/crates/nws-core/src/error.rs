use thiserror::Error;

pub type Result<T> = std::result::Result<T, NwsError>;

#[derive(Debug, Error)]
pub enum NwsError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("frozen pool for layer {layer_id} cannot be mutated")]
    FrozenPool { layer_id: usize },

    #[error("corrupt model: layer {layer_id} position {position}: index {index} out of range (pool size {pool_size})")]
    CorruptModel {
        layer_id: usize,
        position: usize,
        index: usize,
        pool_size: usize,
    },

    #[error("incompatible artifact: {0}")]
    IncompatibleArtifact(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("config validation failed: {0}")]
    Config(String),

    #[error("ingestion error at byte offset {offset}: {message}")]
    Ingestion { offset: u64, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NwsError {
    pub fn dim(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        NwsError::Dimension {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    /// Stable process exit code per error class, documented in the README.
    pub fn exit_code(&self) -> i32 {
        match self {
            NwsError::Config(_) | NwsError::InvalidInput(_) => 2,
            NwsError::Checksum(_) => 3,
            NwsError::IncompatibleArtifact(_) => 4,
            NwsError::CorruptModel { .. } => 5,
            NwsError::Ingestion { .. } | NwsError::Format(_) => 6,
            _ => 1,
        }
    }
}
