use std::io;

use thiserror::Error;

use crate::lang::Lang;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("utterances are not ordered by start time (index {index})")]
    Unordered { index: usize },

    #[error("utterances from several movies in one stream ({first} and {other})")]
    MixedMovies { first: String, other: String },

    #[error("alignment link {src}->{tgt} is out of range")]
    LinkOutOfRange { src: usize, tgt: usize },

    #[error("alignment requires two different languages, got {0} twice")]
    SameLanguage(Lang),

    #[error("invalid window configuration: {0}")]
    Window(String),

    #[error("language {0} is not registered in the vocabulary")]
    UnknownLanguage(String),

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid masking proportion {0}, expected a value in (0, 1]")]
    Proportion(f64),

    #[error("{mode} corruption needs {expected}")]
    ModeInput { mode: &'static str, expected: &'static str },

    #[error("corrupted context has no masked utterance")]
    NothingMasked,

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("invalid model input: {0}")]
    Input(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid joint distribution: {0}")]
    Joint(String),

    #[error("task generation failed: {0}")]
    Task(String),

    #[error("{0}")]
    Metrics(String),
}
