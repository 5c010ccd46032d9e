use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("token id {token} outside vocabulary of size {vocab}")]
    Vocabulary { token: u32, vocab: usize },

    #[error("audio features have no frames")]
    EmptyAudio,

    #[error("context window is empty")]
    EmptyContext,

    #[error("degenerate embedding: norm {0:e} below threshold")]
    DegenerateEmbedding(f64),

    #[error("training diverged at step {step}: loss {loss}")]
    TrainingFailure { step: u64, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("leakage: test utterance {0} is present in the retrieval index")]
    Leakage(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the command line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Model,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Selection(_) => ErrorClass::Usage,
            Error::Shape(_)
            | Error::NonFinite(_)
            | Error::Vocabulary { .. }
            | Error::DegenerateEmbedding(_)
            | Error::TrainingFailure { .. } => ErrorClass::Model,
            Error::NotFound(_)
            | Error::EmptyAudio
            | Error::EmptyContext
            | Error::Format(_)
            | Error::EmptyIndex
            | Error::DuplicateKey(_)
            | Error::Leakage(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Data,
        }
    }
}
