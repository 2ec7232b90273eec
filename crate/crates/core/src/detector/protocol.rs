//! Wire format: one JSON object per line, UTF-8, images as base64 PNG.
//!
//! ```text
//! <- {"type":"handshake","protocol_version":1,"class_names":[...],"has_objectness":true,"adapter_info":...}
//! -> {"type":"infer","id":7,"image_png_b64":"iVBOR..."}
//! <- {"type":"detections","id":7,"detections":[{"bbox":[x1,y1,x2,y2],"objectness":0.9,"scores":[...]}]}
//! <- {"type":"error","id":7,"message":"..."}
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use super::{Handshake, ProtocolError};
use crate::types::{BBox, DetectionVector, ImageTensor};

pub const PROTOCOL_VERSION: u32 = 1;

/// Hard cap on a single protocol line.
pub const MAX_LINE_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Handshake(Handshake),
    Infer { id: u64, image_png_b64: String },
    Detections { id: u64, detections: Vec<WireDetection> },
    Error { id: Option<u64>, message: String },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Handshake(_) => "handshake",
            Message::Infer { .. } => "infer",
            Message::Detections { .. } => "detections",
            Message::Error { .. } => "error",
        }
    }

    /// Serialized form, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }

    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(line).map_err(|e| ProtocolError::Malformed { line: truncate(line, 200), reason: e.to_string() })
    }

    pub fn infer(id: u64, image: &ImageTensor) -> Result<Self, ProtocolError> {
        Ok(Message::Infer { id, image_png_b64: STANDARD.encode(encode_png(image)?) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub objectness: f64,
    pub scores: Vec<f64>,
}

impl From<&DetectionVector> for WireDetection {
    fn from(d: &DetectionVector) -> Self {
        Self { bbox: [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2], objectness: d.objectness, scores: d.scores.clone() }
    }
}

impl WireDetection {
    pub fn into_vector(self, class_count: usize) -> Result<DetectionVector, ProtocolError> {
        if self.scores.len() != class_count {
            return Err(ProtocolError::ScoreLength { expected: class_count, got: self.scores.len() });
        }
        let [x1, y1, x2, y2] = self.bbox;
        let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| ProtocolError::InvalidDetection(e.to_string()))?;
        DetectionVector::new(bbox, self.objectness, self.scores).map_err(|e| ProtocolError::InvalidDetection(e.to_string()))
    }
}

pub fn encode_png(image: &ImageTensor) -> Result<Vec<u8>, ProtocolError> {
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf)
        .write_image(image.pixels(), image.width(), image.height(), ExtendedColorType::Rgb8)
        .map_err(|e| ProtocolError::Codec(e.to_string()))?;
    Ok(buf)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor, ProtocolError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| ProtocolError::Codec(e.to_string()))?.to_rgb8();
    ImageTensor::from_rgb_image(img).map_err(|e| ProtocolError::Codec(e.to_string()))
}

pub(crate) fn decode_b64_png(b64: &str) -> Result<ImageTensor, ProtocolError> {
    let bytes = STANDARD.decode(b64).map_err(|e| ProtocolError::Codec(format!("base64: {e}")))?;
    decode_png(&bytes)
}

pub(crate) fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}
