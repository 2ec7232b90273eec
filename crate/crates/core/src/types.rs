//! Shared domain types: images, float rasters, boxes and detection vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An 8-bit RGB raster, row-major, origin at the top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTensor {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dims must be >= 1, got {width}x{height}")));
        }
        let expected = width as usize * height as usize * Self::CHANNELS;
        if pixels.len() != expected {
            return Err(Error::invalid(format!("pixel buffer has {} bytes, expected {expected}", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    /// A single-color image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.pixels.clone()).expect("buffer length checked at construction")
    }

    pub fn from_rgb_image(img: image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }
}

/// A single-channel float raster (masks, saliency values, difference maps).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl Raster {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("raster dims must be >= 1, got {width}x{height}")));
        }
        if values.len() != width as usize * height as usize {
            return Err(Error::invalid(format!("raster has {} values, expected {}", values.len(), width as usize * height as usize)));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// First maximal pixel in row-major order, as `(x, y)`.
    pub fn argmax(&self) -> (u32, u32) {
        let mut best = 0usize;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        ((best % self.width as usize) as u32, (best / self.width as usize) as u32)
    }

    /// Divides by the maximum; an all-zero (or non-positive) raster stays zero.
    pub fn normalized_by_max(&self) -> Raster {
        let max = self.max();
        let values = if max > 0.0 { self.values.iter().map(|&v| v / max).collect() } else { vec![0.0; self.values.len()] };
        Raster { width: self.width, height: self.height, values }
    }

    /// Mean of each `cell`x`cell` block; edge blocks may be smaller.
    pub fn block_means(&self, cell: u32) -> Result<Raster> {
        if cell == 0 {
            return Err(Error::invalid("cell size must be >= 1"));
        }
        let bw = self.width.div_ceil(cell);
        let bh = self.height.div_ceil(cell);
        let mut sums = vec![0f64; (bw * bh) as usize];
        let mut counts = vec![0u32; (bw * bh) as usize];
        for y in 0..self.height {
            for x in 0..self.width {
                let b = ((y / cell) * bw + x / cell) as usize;
                sums[b] += self.get(x, y) as f64;
                counts[b] += 1;
            }
        }
        let values = sums.iter().zip(&counts).map(|(&s, &c)| (s / c as f64) as f32).collect();
        Raster::new(bw, bh, values)
    }
}

/// Axis-aligned half-open pixel box: `[x1, x2) x [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("bbox coordinates must be finite"));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::invalid(format!("bbox corners out of order: ({x1},{y1},{x2},{y2})")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// From COCO `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 < x2 && y1 < y2).then_some(BBox { x1, y1, x2, y2 })
    }

    /// Grows each side by `frac` of the box's own width/height.
    pub fn expanded(&self, frac: f64) -> BBox {
        let dx = self.width() * frac;
        let dy = self.height() * frac;
        BBox { x1: self.x1 - dx, y1: self.y1 - dy, x2: self.x2 + dx, y2: self.y2 + dy }
    }

    /// Whether the pixel at integer position `(x, y)` has its center inside the box.
    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        cx >= self.x1 && cx < self.x2 && cy >= self.y1 && cy < self.y2
    }

    pub fn intersects_image(&self, width: u32, height: u32) -> bool {
        let frame = BBox { x1: 0.0, y1: 0.0, x2: width as f64, y2: height as f64 };
        self.intersection(&frame).is_some()
    }
}

/// One detector proposal: box, objectness and per-class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVector {
    pub bbox: BBox,
    pub objectness: f64,
    pub scores: Vec<f64>,
}

impl DetectionVector {
    pub fn new(bbox: BBox, objectness: f64, scores: Vec<f64>) -> Result<Self> {
        let d = Self { bbox, objectness, scores };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        BBox::new(self.bbox.x1, self.bbox.y1, self.bbox.x2, self.bbox.y2)?;
        if !(0.0..=1.0).contains(&self.objectness) {
            return Err(Error::invalid(format!("objectness {} outside [0,1]", self.objectness)));
        }
        if self.scores.is_empty() {
            return Err(Error::invalid("score vector must be non-empty"));
        }
        if let Some(s) = self.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!("class score {s} outside [0,1]")));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.scores.len()
    }

    /// Index of the highest class score (first on ties).
    pub fn top_class(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

/// A box and label to explain; need not come from the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetDetection {
    pub bbox: BBox,
    pub class_index: usize,
    pub class_count: usize,
}

impl TargetDetection {
    pub fn new(bbox: BBox, class_index: usize, class_count: usize) -> Result<Self> {
        if class_count == 0 || class_index >= class_count {
            return Err(Error::invalid(format!("class index {class_index} out of range for {class_count} classes")));
        }
        Ok(Self { bbox, class_index, class_count })
    }

    /// Objectness 1 and a one-hot class vector.
    pub fn to_vector(&self) -> DetectionVector {
        let mut scores = vec![0.0; self.class_count];
        scores[self.class_index] = 1.0;
        DetectionVector { bbox: self.bbox, objectness: 1.0, scores }
    }

    /// Target built from a detector's own proposal, labelled by its top class.
    pub fn from_detection(d: &DetectionVector) -> Self {
        Self { bbox: d.bbox, class_index: d.top_class(), class_count: d.class_count() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Weighted mask sum divided per pixel by the summed mask exposure.
    #[default]
    Exposure,
    /// The plain weighted mask sum.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMeta {
    pub mask_count: usize,
    pub mask_prob: f64,
    pub grid: (u32, u32),
    pub seed: u64,
    pub normalization: Normalization,
    pub upsampling: String,
}

/// Per-pixel importance for one target, with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    raster: Raster,
    pub meta: SaliencyMeta,
}

impl SaliencyMap {
    pub fn new(raster: Raster, meta: SaliencyMeta) -> Result<Self> {
        if let Some(v) = raster.values().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("saliency value {v} is negative or not finite")));
        }
        Ok(Self { raster, meta })
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn width(&self) -> u32 {
        self.raster.width()
    }

    pub fn height(&self) -> u32 {
        self.raster.height()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_buffer() {
        assert!(ImageTensor::new(2, 2, vec![0; 11]).is_err());
        assert!(ImageTensor::new(0, 2, vec![]).is_err());
        assert!(ImageTensor::new(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn bbox_rejects_inverted_corners() {
        assert!(BBox::new(5.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert_eq!(BBox::new(1.0, 1.0, 1.0, 4.0).unwrap().area(), 0.0);
    }

    #[test]
    fn target_materializes_one_hot() {
        let t = TargetDetection::new(BBox::new(0.0, 0.0, 4.0, 4.0).unwrap(), 2, 4).unwrap();
        let v = t.to_vector();
        assert_eq!(v.objectness, 1.0);
        assert_eq!(v.scores, vec![0.0, 0.0, 1.0, 0.0]);
        assert!(TargetDetection::new(t.bbox, 4, 4).is_err());
    }

    #[test]
    fn argmax_breaks_ties_row_major() {
        let r = Raster::new(3, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.argmax(), (1, 0));
    }

    #[test]
    fn saliency_rejects_negative_values() {
        let meta = SaliencyMeta {
            mask_count: 1,
            mask_prob: 0.5,
            grid: (1, 1),
            seed: 0,
            normalization: Normalization::Raw,
            upsampling: String::new(),
        };
        let r = Raster::new(1, 1, vec![-0.1]).unwrap();
        assert!(SaliencyMap::new(r, meta).is_err());
    }

    #[test]
    fn block_means_pads_and_clips() {
        let r = Raster::new(3, 1, vec![1.0, 3.0, 5.0]).unwrap();
        let b = r.block_means(2).unwrap();
        assert_eq!(b.dims(), (2, 1));
        assert_eq!(b.values(), &[2.0, 5.0]);
    }
}
