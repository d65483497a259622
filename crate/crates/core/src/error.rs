use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdpcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("peer generation failed for class {class:?}: {reason}")]
    Generation { class: String, reason: String },

    #[error("offline mode: no cached response for prompt {0:?}")]
    Offline(String),

    #[error("llm provider error: {0}")]
    Provider(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OdpcError {
    /// Short stable identifier, used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            OdpcError::InvalidArgument(_) => "invalid_argument",
            OdpcError::Shape(_) => "shape",
            OdpcError::DegenerateBatch(_) => "degenerate_batch",
            OdpcError::Config(_) => "config",
            OdpcError::Generation { .. } => "generation",
            OdpcError::Offline(_) => "offline",
            OdpcError::Provider(_) => "provider",
            OdpcError::Format(_) => "format",
            OdpcError::Corruption(_) => "corruption",
            OdpcError::NotFound(_) => "not_found",
            OdpcError::Io(_) => "io",
            OdpcError::Json(_) => "json",
        }
    }
}

pub type Result<T, E = OdpcError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> OdpcError {
    OdpcError::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> OdpcError {
    OdpcError::Shape(msg.into())
}
