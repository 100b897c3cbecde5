use thiserror::Error;

use crate::sparse::CompressionScheme;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decode error in {scheme:?} payload at byte {offset}: {reason}")]
    Decode {
        scheme: Option<CompressionScheme>,
        offset: usize,
        reason: String,
    },

    #[error("degenerate filter {filter}: {unpruned} unpruned entries, at least 2 required")]
    DegenerateFilter { filter: usize, unpruned: usize },

    #[error("trace mismatch: {0}")]
    TraceMismatch(String),

    #[error("non-finite value at layer {layer}")]
    NonFinite { layer: usize },

    #[error("corrupt activation cache: index {index} out of range for {len} elements")]
    CorruptCache { index: usize, len: usize },

    #[error("layer {layer} would be emptied: marking {marked} of {unpruned} unpruned weights")]
    LayerExhaustion {
        layer: usize,
        marked: usize,
        unpruned: usize,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn decode(scheme: Option<CompressionScheme>, offset: usize, reason: impl Into<String>) -> Self {
        Error::Decode {
            scheme,
            offset,
            reason: reason.into(),
        }
    }
}
