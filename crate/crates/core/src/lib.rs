//! Saliency maps for object detectors that are only queried, never opened.
//!
//! The image is perturbed with many random smooth masks, an opaque detector
//! is run on each perturbed copy, and every mask is credited by how well the
//! detections it produced still match the detection being explained. The
//! credited masks are summed into a per-pixel saliency map.
//!
//! ```no_run
//! use drise::detector::synthetic::{RectangleDetector, RectangleParams};
//! use drise::{explain, BBox, ExplainRequest, ImageTensor, MaskSpec, TargetDetection};
//!
//! # fn main() -> drise::Result<()> {
//! let image = ImageTensor::filled(64, 64, [0, 0, 0])?;
//! let target = TargetDetection::new(BBox::new(8.0, 8.0, 24.0, 24.0)?, 0, 3)?;
//! let req = ExplainRequest::new(image, vec![target], MaskSpec::default());
//! let mut detector = [RectangleDetector::new(RectangleParams::default())?];
//! let result = explain(&req, &mut detector)?;
//! println!("peak at {:?}", result.maps[0].raster().argmax());
//! # Ok(())
//! # }
//! ```

pub mod aggregate;
pub mod bias;
pub mod coco;
pub mod detector;
pub mod engine;
mod error;
pub mod geometry;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod resample;
pub mod similarity;
mod types;

pub use detector::{Detector, DetectorHandle, Handshake, ProtocolError};
pub use engine::{explain, explain_arbitrary, occlusion_oracle, saliency_difference, ExplainRequest, ExplainResult};
pub use error::{Error, Result};
pub use geometry::{cosine_similarity, iou};
pub use masking::{apply_mask, generate_masks, Mask, MaskSpec};
pub use resample::Resample;
pub use similarity::{max_similarity, similarity, SimilarityConfig};
pub use types::{BBox, DetectionVector, ImageTensor, Normalization, Raster, SaliencyMap, SaliencyMeta, TargetDetection};
