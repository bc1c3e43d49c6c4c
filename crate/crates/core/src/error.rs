use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed MIDI file at byte {offset}: {message}")]
    MidiParse { offset: usize, message: String },

    #[error("score contains no non-drum notes")]
    EmptyScore,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("grammar error at event {index}: {reason}")]
    Grammar { index: usize, reason: String },

    #[error("sequence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("constraint conflict: {0}")]
    ConstraintConflict(String),

    #[error("invalid prompt: {0}")]
    Prompt(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}")]
    NonFinite { step: u64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid file format in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
