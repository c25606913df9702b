//! Error types shared across the workspace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The on-disk layout is malformed (missing arrays, bad magic, truncated file).
    #[error("format error: {0}")]
    Format(String),

    /// Data violates a structural invariant (length mismatch, non-finite value).
    #[error("validation error: {0}")]
    Validation(String),

    /// Array widths disagree with what a model or operation expects.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An operation was called on a model that has not been fitted/trained.
    #[error("not fitted: {0}")]
    NotFitted(String),

    /// An embedder could not produce an embedding.
    #[error("embedder failure for trajectory '{trajectory}': {message}")]
    Embedder { trajectory: String, message: String },

    /// Environment misuse (e.g. stepping a finished episode).
    #[error("environment error: {0}")]
    Env(String),

    /// A required input artifact is absent.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// Numerical failure (divergence, non-finite loss).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
