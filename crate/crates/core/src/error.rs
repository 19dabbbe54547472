//! Error type shared across the workspace.

use thiserror::Error;

/// Errors produced by model, training, and pipeline operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("parameter layout mismatch: expected {expected} layout, got {got}")]
    LayoutMismatch { expected: String, got: String },

    #[error("token id {token} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {site} at step {step}")]
    NonFinite { site: String, step: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("requested {requested} prompts but split holds only {available} target subsets")]
    PromptSpaceExhausted { requested: usize, available: usize },

    #[error("checkpoint hash mismatch in {path}: header says {expected}, payload hashes to {actual}")]
    HashMismatch {
        path: String,
        expected: String,
        actual: String,
    },

    #[error("unsupported checkpoint format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: String, reason: String },

    #[error("soup lineage mismatch: {0} (pass allow_cross_lineage to override)")]
    LineageMismatch(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    StageFailed {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
