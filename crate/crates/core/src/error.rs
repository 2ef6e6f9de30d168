use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// `during` is `batch N` or `validation`.
    #[error("non-finite loss at epoch {epoch}, {during} (loss = {loss})")]
    NonFiniteLoss { epoch: usize, during: String, loss: f64 },

    #[error("trajectory `{id}` has no actions")]
    MissingActions { id: String },

    #[error("trajectory `{id}` has source `{source_kind}`, expected `{expected}`")]
    WrongSource {
        id: String,
        source_kind: String,
        expected: String,
    },

    #[error("trajectory `{id}` has {len} states, at least {min} required")]
    TooShort { id: String, len: usize, min: usize },

    #[error("invalid trajectory `{id}`: {reason}")]
    InvalidTrajectory { id: String, reason: String },

    #[error("expected a {expected} model, got {got}")]
    WrongModelKind {
        expected: &'static str,
        got: &'static str,
    },

    #[error("invalid demonstration: {0}")]
    InvalidDemo(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
