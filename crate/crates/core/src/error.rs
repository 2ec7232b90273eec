use thiserror::Error;

use crate::detector::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("class count mismatch: expected {expected}, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    /// A detector call failed part way through a multi-call computation.
    #[error("aborted after {completed} of {total} detector calls: {source}")]
    Aborted {
        completed: usize,
        total: usize,
        #[source]
        source: Box<Error>,
    },

    /// A deletion/insertion curve stopped early; the points gathered so far are kept.
    #[error("curve aborted after {} points: {source}", partial.len())]
    CurveAborted {
        partial: Vec<(f64, f64)>,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(expected: (u32, u32), actual: (u32, u32)) -> Self {
        Error::DimensionMismatch { expected: format!("{}x{}", expected.0, expected.1), actual: format!("{}x{}", actual.0, actual.1) }
    }

    /// True when the root cause is a detector protocol failure.
    pub fn is_protocol(&self) -> bool {
        match self {
            Error::Protocol(_) => true,
            Error::Aborted { source, .. } | Error::CurveAborted { source, .. } => source.is_protocol(),
            _ => false,
        }
    }
}
