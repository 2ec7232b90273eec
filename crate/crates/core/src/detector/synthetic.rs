//! Color-keyed synthetic detectors and the scenes they are tested on.
//!
//! [`RectangleDetector`] finds 4-connected regions whose pixels lie within a
//! color tolerance of a class color. Masking darkens pixels, so a region
//! survives only where the mask stays close to 1; evidence is strictly local
//! to the object's pixels. [`BiasedDetector`] adds a learned-shortcut
//! analog: any marker-colored disc yields a confident detection of a fixed
//! class, whether or not an object is present.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Detector, Handshake, WireDetection};
use crate::error::{Error, Result};
use crate::types::{BBox, DetectionVector, ImageTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassColor {
    pub name: String,
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleParams {
    pub classes: Vec<ClassColor>,
    /// Max Euclidean RGB distance for a pixel to count as a class color.
    pub tolerance: f64,
    pub min_area: usize,
    /// Distance at which a class score falls to 0.
    pub falloff: f64,
}

impl Default for RectangleParams {
    fn default() -> Self {
        let class = |name: &str, rgb| ClassColor { name: name.into(), rgb };
        Self {
            classes: vec![class("red", [255, 0, 0]), class("green", [0, 255, 0]), class("hydrant", [255, 255, 0])],
            tolerance: 90.0,
            min_area: 12,
            falloff: 180.0,
        }
    }
}

impl RectangleParams {
    /// Same class list with every class color replaced by a random one.
    pub fn randomized(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for c in &mut out.classes {
            c.rgb = [rng.random(), rng.random(), rng.random()];
        }
        out
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

fn dist2(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter().zip(&b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

struct Component {
    label: usize,
    area: usize,
    min: (u32, u32),
    max: (u32, u32),
    color_sum: [f64; 3],
    pos_sum: (f64, f64),
}

impl Component {
    fn bbox(&self) -> BBox {
        BBox { x1: self.min.0 as f64, y1: self.min.1 as f64, x2: (self.max.0 + 1) as f64, y2: (self.max.1 + 1) as f64 }
    }

    fn mean_color(&self) -> [f64; 3] {
        self.color_sum.map(|s| s / self.area as f64)
    }

    fn centroid(&self) -> (f64, f64) {
        (self.pos_sum.0 / self.area as f64 + 0.5, self.pos_sum.1 / self.area as f64 + 0.5)
    }
}

const UNLABELED: u16 = u16::MAX;

/// 4-connected components of equal non-empty labels, discovered in row-major order.
fn components(image: &ImageTensor, labels: &[u16]) -> Vec<Component> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if labels[start] == UNLABELED || seen[start] {
            continue;
        }
        let label = labels[start];
        let mut c =
            Component { label: label as usize, area: 0, min: (u32::MAX, u32::MAX), max: (0, 0), color_sum: [0.0; 3], pos_sum: (0.0, 0.0) };
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            let rgb = image.get(x as u32, y as u32);
            c.area += 1;
            c.min = (c.min.0.min(x as u32), c.min.1.min(y as u32));
            c.max = (c.max.0.max(x as u32), c.max.1.max(y as u32));
            for (sum, v) in c.color_sum.iter_mut().zip(rgb) {
                *sum += v as f64;
            }
            c.pos_sum.0 += x as f64;
            c.pos_sum.1 += y as f64;
            let mut visit = |q: usize| {
                if !seen[q] && labels[q] == label {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        out.push(c);
    }
    out
}

/// Detects solid regions of the configured class colors.
#[derive(Debug, Clone)]
pub struct RectangleDetector {
    params: RectangleParams,
    handshake: Handshake,
}

impl RectangleDetector {
    pub fn new(params: RectangleParams) -> Result<Self> {
        if params.classes.is_empty() || params.classes.len() >= UNLABELED as usize {
            return Err(Error::invalid("synthetic detector needs between 1 and 65534 classes"));
        }
        if !(params.tolerance > 0.0 && params.falloff > 0.0) {
            return Err(Error::invalid("tolerance and falloff must be positive"));
        }
        let handshake = Handshake::new(
            params.class_names(),
            true,
            json!({
                "model": "synthetic-rectangle",
                "tolerance": params.tolerance,
                "min_area": params.min_area,
                "nms": "none",
                "threshold": "none",
            }),
        );
        Ok(Self { params, handshake })
    }

    pub fn params(&self) -> &RectangleParams {
        &self.params
    }

    fn label_pixels(&self, image: &ImageTensor) -> Vec<u16> {
        let tol2 = self.params.tolerance * self.params.tolerance;
        image
            .pixels()
            .chunks_exact(3)
            .map(|px| {
                let rgb = [px[0], px[1], px[2]];
                let mut best = (UNLABELED, f64::INFINITY);
                for (i, c) in self.params.classes.iter().enumerate() {
                    let d = dist2(rgb, c.rgb);
                    if d <= tol2 && d < best.1 {
                        best = (i as u16, d);
                    }
                }
                best.0
            })
            .collect()
    }

    pub fn detect(&self, image: &ImageTensor) -> Vec<DetectionVector> {
        let labels = self.label_pixels(image);
        let w = image.width() as usize;
        components(image, &labels)
            .into_iter()
            .filter(|c| c.area >= self.params.min_area)
            .map(|c| {
                let mut inside = 0usize;
                for y in c.min.1..=c.max.1 {
                    let row = &labels[y as usize * w..(y as usize + 1) * w];
                    inside += row[c.min.0 as usize..=c.max.0 as usize].iter().filter(|&&l| l as usize == c.label).count();
                }
                let bbox = c.bbox();
                let mean = c.mean_color();
                let scores = self
                    .params
                    .classes
                    .iter()
                    .map(|cls| {
                        let d = mean.iter().zip(&cls.rgb).map(|(&m, &v)| (m - v as f64).powi(2)).sum::<f64>().sqrt();
                        (1.0 - d / self.params.falloff).clamp(0.0, 1.0)
                    })
                    .collect();
                DetectionVector { bbox, objectness: inside as f64 / bbox.area(), scores }
            })
            .collect()
    }
}

impl Detector for RectangleDetector {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn infer(&mut self, image: &ImageTensor) -> Result<Vec<DetectionVector>> {
        Ok(self.detect(image))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerBias {
    pub rgb: [u8; 3],
    pub radius: u32,
    pub tolerance: f64,
    /// Class the shortcut fires for.
    pub class_index: usize,
}

impl Default for MarkerBias {
    fn default() -> Self {
        Self { rgb: [0, 0, 255], radius: 6, tolerance: 90.0, class_index: 2 }
    }
}

/// A rectangle detector that has also learned "marker disc means class k".
#[derive(Debug, Clone)]
pub struct BiasedDetector {
    base: RectangleDetector,
    bias: MarkerBias,
    handshake: Handshake,
}

impl BiasedDetector {
    pub fn new(params: RectangleParams, bias: MarkerBias) -> Result<Self> {
        if bias.radius == 0 {
            return Err(Error::invalid("marker radius must be >= 1"));
        }
        if bias.class_index >= params.classes.len() {
            return Err(Error::invalid(format!("marker class {} out of range", bias.class_index)));
        }
        let base = RectangleDetector::new(params)?;
        let mut handshake = base.handshake.clone();
        handshake.adapter_info["model"] = json!("synthetic-biased");
        handshake.adapter_info["marker"] = serde_json::to_value(&bias)?;
        Ok(Self { base, bias, handshake })
    }

    pub fn bias(&self) -> &MarkerBias {
        &self.bias
    }

    pub fn detect(&self, image: &ImageTensor) -> Vec<DetectionVector> {
        let mut out = self.base.detect(image);
        let tol2 = self.bias.tolerance * self.bias.tolerance;
        let labels: Vec<u16> = image
            .pixels()
            .chunks_exact(3)
            .map(|px| if dist2([px[0], px[1], px[2]], self.bias.rgb) <= tol2 { 0 } else { UNLABELED })
            .collect();
        let r = self.bias.radius as f64;
        let disc = std::f64::consts::PI * r * r;
        let (w, h) = (image.width() as f64, image.height() as f64);
        for c in components(image, &labels) {
            let a = c.area as f64;
            if a < 0.3 * disc || a > 4.0 * disc {
                continue;
            }
            let (cx, cy) = c.centroid();
            let bbox =
                BBox { x1: (cx - 2.0 * r).max(0.0), y1: (cy - 2.0 * r).max(0.0), x2: (cx + 2.0 * r).min(w), y2: (cy + 2.0 * r).min(h) };
            let mut scores = vec![0.0; self.base.params.classes.len()];
            scores[self.bias.class_index] = 1.0;
            out.push(DetectionVector { bbox, objectness: (a / disc).min(1.0), scores });
        }
        out
    }
}

impl Detector for BiasedDetector {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn infer(&mut self, image: &ImageTensor) -> Result<Vec<DetectionVector>> {
        Ok(self.detect(image))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoConfig {
    pub class_names: Vec<String>,
    #[serde(default = "default_true")]
    pub has_objectness: bool,
    #[serde(default)]
    pub adapter_info: serde_json::Value,
    #[serde(default)]
    pub detections: Vec<WireDetection>,
}

fn default_true() -> bool {
    true
}

/// Returns the same configured detections for every image.
#[derive(Debug, Clone)]
pub struct EchoDetector {
    handshake: Handshake,
    detections: Vec<DetectionVector>,
}

impl EchoDetector {
    pub fn new(cfg: EchoConfig) -> Result<Self> {
        let c = cfg.class_names.len();
        let detections = cfg.detections.into_iter().map(|d| d.into_vector(c)).collect::<Result<Vec<_>, _>>()?;
        let info = if cfg.adapter_info.is_null() { json!({"model": "echo"}) } else { cfg.adapter_info };
        let handshake = Handshake::new(cfg.class_names, cfg.has_objectness, info);
        handshake.validate()?;
        Ok(Self { handshake, detections })
    }

    pub fn constant(class_names: Vec<String>, detections: Vec<DetectionVector>) -> Result<Self> {
        Self::new(EchoConfig {
            class_names,
            has_objectness: true,
            adapter_info: serde_json::Value::Null,
            detections: detections.iter().map(WireDetection::from).collect(),
        })
    }
}

impl Detector for EchoDetector {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn infer(&mut self, _image: &ImageTensor) -> Result<Vec<DetectionVector>> {
        Ok(self.detections.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bbox: BBox,
    pub class_index: usize,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImageTensor,
    pub objects: Vec<SceneObject>,
}

/// Low-saturation gray texture that matches none of the default class colors.
pub fn background(width: u32, height: u32, seed: u64) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bw, bh) = (width.div_ceil(8), height.div_ceil(8));
    let blocks: Vec<i32> = (0..bw * bh).map(|_| rng.random_range(90..=150)).collect();
    let mut px = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            let base = blocks[((y / 8) * bw + x / 8) as usize];
            for _ in 0..3 {
                px.push((base + rng.random_range(-8..=8)).clamp(0, 255) as u8);
            }
        }
    }
    ImageTensor::new(width, height, px)
}

pub fn paint_rect(image: &mut ImageTensor, bbox: &BBox, rgb: [u8; 3]) {
    let x0 = bbox.x1.max(0.0) as u32;
    let y0 = bbox.y1.max(0.0) as u32;
    let x1 = (bbox.x2.min(image.width() as f64)) as u32;
    let y1 = (bbox.y2.min(image.height() as f64)) as u32;
    for y in y0..y1 {
        for x in x0..x1 {
            image.put(x, y, rgb);
        }
    }
}

/// A textured background with `count` non-touching solid rectangles of
/// distinct classes (cycling if `count` exceeds the class list).
pub fn rectangle_scene(width: u32, height: u32, seed: u64, params: &RectangleParams, count: usize) -> Result<Scene> {
    let mut image = background(width, height, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b1e_c7a5_0000);
    let side = width.min(height);
    let (lo, hi) = ((side / 5).max(4), (side * 2 / 5).max(5));
    if lo + 4 >= side {
        return Err(Error::invalid(format!("image {width}x{height} too small for a rectangle scene")));
    }
    let first_class = rng.random_range(0..params.classes.len());
    let mut objects: Vec<SceneObject> = Vec::new();
    for k in 0..count {
        let class_index = (first_class + k) % params.classes.len();
        let mut placed = None;
        for _ in 0..10_000 {
            let w = rng.random_range(lo..=hi.min(width - 4));
            let h = rng.random_range(lo..=hi.min(height - 4));
            let x = rng.random_range(2..=width - w - 2);
            let y = rng.random_range(2..=height - h - 2);
            let b = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)?;
            let gap = BBox { x1: b.x1 - 4.0, y1: b.y1 - 4.0, x2: b.x2 + 4.0, y2: b.y2 + 4.0 };
            if objects.iter().all(|o| o.bbox.intersection(&gap).is_none()) {
                placed = Some(b);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| Error::invalid("could not place all rectangles"))?;
        paint_rect(&mut image, &bbox, params.classes[class_index].rgb);
        objects.push(SceneObject { bbox, class_index });
    }
    Ok(Scene { image, objects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::masking::apply_mask;
    use crate::types::Raster;

    fn red_square_image() -> (ImageTensor, BBox) {
        let mut img = background(96, 96, 1).unwrap();
        let sq = BBox::new(30.0, 20.0, 70.0, 60.0).unwrap();
        paint_rect(&mut img, &sq, [255, 0, 0]);
        (img, sq)
    }

    #[test]
    fn finds_the_red_square() {
        let (img, sq) = red_square_image();
        let det = RectangleDetector::new(RectangleParams::default()).unwrap();
        let out = det.detect(&img);
        assert_eq!(out.len(), 1);
        assert!(iou(&out[0].bbox, &sq) >= 0.8);
        assert_eq!(out[0].top_class(), 0);
        assert_eq!(out[0].objectness, 1.0);
    }

    #[test]
    fn half_masked_away_from_square_still_detects() {
        let (img, sq) = red_square_image();
        // black out the right-hand 20 columns, clear of the square
        let mut m = vec![1.0f32; 96 * 96];
        for y in 0..96 {
            for x in 76..96 {
                m[y * 96 + x] = 0.0;
            }
        }
        // and scale the rest of the background by half
        for y in 0..96usize {
            for x in 0..76usize {
                if !sq.contains_pixel(x as u32, y as u32) {
                    m[y * 96 + x] = 0.5;
                }
            }
        }
        let masked = apply_mask(&img, &Raster::new(96, 96, m).unwrap()).unwrap();
        let det = RectangleDetector::new(RectangleParams::default()).unwrap();
        let out = det.detect(&masked);
        assert_eq!(out.len(), 1);
        assert!(iou(&out[0].bbox, &sq) >= 0.8);
    }

    #[test]
    fn fully_masked_square_disappears() {
        let (img, sq) = red_square_image();
        let mut m = vec![1.0f32; 96 * 96];
        for y in 20..60 {
            for x in 30..70 {
                m[y * 96 + x] = 0.0;
            }
        }
        let masked = apply_mask(&img, &Raster::new(96, 96, m).unwrap()).unwrap();
        let det = RectangleDetector::new(RectangleParams::default()).unwrap();
        assert!(det.detect(&masked).is_empty());
        assert!(sq.area() > 0.0);
    }

    #[test]
    fn black_image_has_no_detections() {
        let img = ImageTensor::filled(32, 32, [0, 0, 0]).unwrap();
        let det = RectangleDetector::new(RectangleParams::default()).unwrap();
        assert!(det.detect(&img).is_empty());
    }

    #[test]
    fn detection_is_deterministic() {
        let scene = rectangle_scene(64, 64, 9, &RectangleParams::default(), 2).unwrap();
        let det = RectangleDetector::new(RectangleParams::default()).unwrap();
        assert_eq!(det.detect(&scene.image), det.detect(&scene.image));
    }

    #[test]
    fn scene_objects_are_detected_exactly() {
        let params = RectangleParams::default();
        let det = RectangleDetector::new(params.clone()).unwrap();
        for seed in 0..20 {
            let scene = rectangle_scene(64, 64, seed, &params, 2).unwrap();
            let out = det.detect(&scene.image);
            assert_eq!(out.len(), 2, "seed {seed}");
            for o in &scene.objects {
                let hit = out.iter().find(|d| d.bbox == o.bbox).expect("object found");
                assert_eq!(hit.top_class(), o.class_index);
            }
        }
    }

    #[test]
    fn biased_detector_fires_on_marker_only() {
        let params = RectangleParams::default();
        let biased = BiasedDetector::new(params.clone(), MarkerBias::default()).unwrap();
        let plain = RectangleDetector::new(params).unwrap();
        let scene = rectangle_scene(64, 64, 3, plain.params(), 1).unwrap();
        assert_eq!(biased.detect(&scene.image), plain.detect(&scene.image));

        let mut img = background(64, 64, 4).unwrap();
        let (cx, cy) = (20i32, 40i32);
        for y in 0..64i32 {
            for x in 0..64i32 {
                if ((x - cx).pow(2) + (y - cy).pow(2)) as f64 <= 36.0 {
                    img.put(x as u32, y as u32, [0, 0, 255]);
                }
            }
        }
        let out = biased.detect(&img);
        assert_eq!(out.len(), 1);
        let (bx, by) = out[0].bbox.center();
        let d = ((bx - (cx as f64 + 0.5)).powi(2) + (by - (cy as f64 + 0.5)).powi(2)).sqrt();
        assert!(d <= 12.0, "false positive centered {d} px from marker");
        assert_eq!(out[0].top_class(), 2);
    }

    #[test]
    fn randomized_colors_differ() {
        let p = RectangleParams::default();
        let r = p.randomized(1);
        assert_eq!(r.class_names(), p.class_names());
        assert_ne!(r.classes, p.classes);
    }

    #[test]
    fn echo_returns_fixed_detections() {
        let d = DetectionVector::new(BBox::new(1.0, 2.0, 3.0, 4.0).unwrap(), 0.5, vec![0.0, 1.0]).unwrap();
        let mut e = EchoDetector::constant(vec!["a".into(), "b".into()], vec![d.clone()]).unwrap();
        let img = ImageTensor::filled(2, 2, [1, 2, 3]).unwrap();
        assert_eq!(e.infer(&img).unwrap(), vec![d]);
    }
}
