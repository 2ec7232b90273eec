//! Circular markers for planting a dataset bias at box corners, and for
//! probing a detector with a marker placed anywhere.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::CocoDataset;
use crate::error::{Error, Result};
use crate::io::{load_image, save_image};
use crate::types::{BBox, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    TopLeft,
    TopRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub corner: Corner,
    pub radius: u32,
    pub color: [u8; 3],
    /// Category id, as in the annotation file.
    pub target_category: u64,
}

impl MarkerSpec {
    pub fn new(corner: Corner, radius: u32, color: [u8; 3], target_category: u64) -> Result<Self> {
        if radius == 0 {
            return Err(Error::invalid("marker radius must be >= 1"));
        }
        Ok(Self { corner, radius, color, target_category })
    }

    /// Radius 6, blue at top-left or yellow at top-right.
    pub fn default_for(corner: Corner, target_category: u64) -> Self {
        let color = match corner {
            Corner::TopLeft => [0, 0, 255],
            Corner::TopRight => [255, 255, 0],
        };
        Self { corner, radius: 6, color, target_category }
    }
}

/// Paints every pixel whose center is within `radius` of `(cx, cy)`.
fn paint_disc(image: &mut ImageTensor, (cx, cy): (f64, f64), radius: u32, color: [u8; 3]) {
    let r = radius as f64;
    let (w, h) = image.dims();
    let lo = |c: f64| (c - r - 1.0).floor().max(0.0) as u32;
    let hi = |c: f64, limit: u32| ((c + r + 1.0).ceil().max(0.0) as u32).min(limit);
    for y in lo(cy)..hi(cy, h) {
        for x in lo(cx)..hi(cx, w) {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                image.put(x, y, color);
            }
        }
    }
}

/// Marker centered on the selected corner of `bbox`, clamped to the frame.
pub fn inject_marker(image: &ImageTensor, bbox: &BBox, spec: &MarkerSpec) -> ImageTensor {
    let (w, h) = image.dims();
    let x = match spec.corner {
        Corner::TopLeft => bbox.x1,
        Corner::TopRight => bbox.x2,
    };
    let center = (x.clamp(0.0, w as f64), bbox.y1.clamp(0.0, h as f64));
    let mut out = image.clone();
    paint_disc(&mut out, center, spec.radius, spec.color);
    out
}

/// Marker centered at an arbitrary `position` inside the image.
pub fn place_marker_free(image: &ImageTensor, position: (f64, f64), spec: &MarkerSpec) -> Result<ImageTensor> {
    let (w, h) = image.dims();
    let (x, y) = position;
    if !(x >= 0.0 && y >= 0.0 && x <= w as f64 && y <= h as f64) {
        return Err(Error::invalid(format!("marker position ({x},{y}) outside {w}x{h} image")));
    }
    let mut out = image.clone();
    paint_disc(&mut out, position, spec.radius, spec.color);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingFile {
    pub image_id: u64,
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BiasReport {
    /// Ids of images that received at least one marker, ascending.
    pub modified: Vec<u64>,
    pub copied: Vec<u64>,
    pub markers: usize,
    pub missing: Vec<MissingFile>,
}

enum Outcome {
    Modified(usize),
    Copied,
}

/// Writes a copy of the dataset's images to `out_dir`: images holding the
/// target category get one marker per such box, all others are copied byte
/// for byte. Unreadable files are listed in the report instead of aborting.
pub fn bias_dataset(dataset: &CocoDataset, images_dir: &Path, spec: &MarkerSpec, out_dir: &Path) -> Result<BiasReport> {
    std::fs::create_dir_all(out_dir)?;
    let groups = dataset.by_image();
    let mut images: Vec<_> = dataset.images.iter().collect();
    images.sort_by_key(|i| i.id);

    let results: Vec<(u64, PathBuf, Result<Outcome>)> = images
        .par_iter()
        .map(|img| {
            let src = images_dir.join(&img.file_name);
            let dst = out_dir.join(&img.file_name);
            let run = || -> Result<Outcome> {
                if let Some(parent) = dst.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                let boxes = groups[&img.id]
                    .iter()
                    .filter(|a| a.category_id == spec.target_category)
                    .map(|a| a.corners())
                    .collect::<Result<Vec<_>>>()?;
                if boxes.is_empty() {
                    std::fs::copy(&src, &dst)?;
                    return Ok(Outcome::Copied);
                }
                let mut pixels = load_image(&src)?;
                for b in &boxes {
                    pixels = inject_marker(&pixels, b, spec);
                }
                save_image(&pixels, &dst)?;
                Ok(Outcome::Modified(boxes.len()))
            };
            let outcome = run();
            (img.id, src, outcome)
        })
        .collect();

    let mut report = BiasReport::default();
    for (id, path, r) in results {
        match r {
            Ok(Outcome::Modified(n)) => {
                report.modified.push(id);
                report.markers += n;
            }
            Ok(Outcome::Copied) => report.copied.push(id),
            Err(e) => report.missing.push(MissingFile { image_id: id, path, reason: e.to_string() }),
        }
    }
    Ok(report)
}
