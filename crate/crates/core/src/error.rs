use thiserror::Error;

/// Errors produced by the metric-learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {label} has a single member; mining needs at least two per class")]
    SingletonClass { label: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset `{0}` is too small for a stratified 70/15/15 split")]
    TooSmallToSplit(String),

    #[error("dataset has zero feature variance; hypersphere radius would be 0")]
    ZeroVariance,

    #[error("unknown generator `{name}`; known generators: {known}")]
    UnknownGenerator { name: String, known: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
