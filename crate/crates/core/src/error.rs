use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backward already ran on this tape; call reset() before reusing it")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got dims {0:?}")]
    NonScalarLoss([usize; 4]),

    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint has unknown dtype tag {0}")]
    UnknownDType(u8),

    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),

    #[error("checkpoint param {name}: {reason}")]
    CheckpointParam { name: String, reason: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
