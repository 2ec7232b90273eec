//! The black-box detector boundary.
//!
//! Everything the engine knows about a detector goes through [`Detector`]:
//! a handshake describing the class list, and image-in/proposals-out calls.
//! [`DetectorHandle`] speaks the NDJSON wire protocol to a child process;
//! the [`synthetic`] detectors run in-process or behind [`serve`].

mod protocol;
mod serve;
mod session;
pub mod synthetic;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Result;
use crate::types::{DetectionVector, ImageTensor};

pub use protocol::{decode_png, encode_png, Message, WireDetection, MAX_LINE_BYTES, PROTOCOL_VERSION};
pub use serve::serve;
pub use session::{DetectorHandle, SessionOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol_version: u32,
    pub class_names: Vec<String>,
    pub has_objectness: bool,
    /// Model, thresholds, NMS settings: whatever the adapter wants to report.
    #[serde(default)]
    pub adapter_info: serde_json::Value,
}

impl Handshake {
    pub fn new(class_names: Vec<String>, has_objectness: bool, adapter_info: serde_json::Value) -> Self {
        Self { protocol_version: PROTOCOL_VERSION, class_names, has_objectness, adapter_info }
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(ProtocolError::VersionMismatch { expected: PROTOCOL_VERSION, got: self.protocol_version });
        }
        if self.class_names.is_empty() {
            return Err(ProtocolError::InvalidHandshake("class_names is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("failed to spawn detector `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no handshake from detector within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("protocol version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("invalid handshake: {0}")]
    InvalidHandshake(String),
    #[error("malformed line `{line}`: {reason}")]
    Malformed { line: String, reason: String },
    #[error("expected a `{expected}` message, got `{got}`")]
    UnexpectedMessage { expected: &'static str, got: String },
    #[error("response id {got} does not match outstanding request {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("detection has {got} scores, handshake declared {expected} classes")]
    ScoreLength { expected: usize, got: usize },
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("detector process exited ({0})")]
    ChildExited(String),
    #[error("request {id} timed out after {after:?}")]
    Timeout { id: u64, after: Duration },
    #[error("session is dead: {0}")]
    SessionDead(String),
    #[error("detector reported an error for request {id:?}: {message}")]
    Remote { id: Option<u64>, message: String },
    #[error("line exceeds {0} bytes")]
    LineTooLong(usize),
    #[error("image codec: {0}")]
    Codec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An object detector seen only through its inputs and outputs.
pub trait Detector: Send {
    fn handshake(&self) -> &Handshake;

    /// Proposals for one image, in the detector's own order.
    fn infer(&mut self, image: &ImageTensor) -> Result<Vec<DetectionVector>>;

    fn class_count(&self) -> usize {
        self.handshake().class_count()
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn handshake(&self) -> &Handshake {
        (**self).handshake()
    }

    fn infer(&mut self, image: &ImageTensor) -> Result<Vec<DetectionVector>> {
        (**self).infer(image)
    }
}

impl<D: Detector + ?Sized> Detector for &mut D {
    fn handshake(&self) -> &Handshake {
        (**self).handshake()
    }

    fn infer(&mut self, image: &ImageTensor) -> Result<Vec<DetectionVector>> {
        (**self).infer(image)
    }
}
