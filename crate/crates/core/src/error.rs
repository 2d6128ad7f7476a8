use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("bad magic bytes in model file")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated model file: {0}")]
    Truncated(String),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("unresolved parameter alias `{0}`")]
    UnresolvedAlias(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
