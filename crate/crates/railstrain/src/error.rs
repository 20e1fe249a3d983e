//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by loading, fitting, scoring, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be parsed. Carries the offending location when known.
    #[error("parse error in {path}{}: {msg}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<u64>,
        msg: String,
    },

    /// An input violated a documented precondition or invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Matrix/vector dimensions are incompatible.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A test set was scored against a baseline of a different speed bin.
    #[error(
        "speed bin mismatch: passage bin {passage_bin:?} vs model bin {model_bin:?}; \
         baselines are per speed bin and must not be pooled across speeds"
    )]
    SpeedBinMismatch {
        passage_bin: String,
        model_bin: String,
    },

    /// No model exists for a (channel, speed bin) present in the test set.
    #[error("no baseline model for channel {channel:?} speed bin {speed_bin:?}")]
    MissingModel { channel: String, speed_bin: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn parse(path: impl Into<String>, line: Option<u64>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
