//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("unknown vnf type `{0}`")]
    UnknownVnfType(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("insufficient resources: {0}")]
    InsufficientResources(String),

    #[error("request {0} already holds resources")]
    DuplicateRequest(u64),

    #[error("request {0} holds no resources")]
    UnknownRequest(u64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss must be scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("size guard violated: {0}")]
    GuardViolation(String),

    #[error("model not applicable to this topology: {0}")]
    TopologyIncompatible(String),

    #[error("{what} digest mismatch: expected {expected}, got {got}")]
    DigestMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("optimizer key mismatch: {0}")]
    KeyMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dataset format: {0}")]
    DatasetFormat(String),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}
