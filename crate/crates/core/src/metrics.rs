//! Saliency evaluation: pointing game and deletion/insertion curves.

use image::imageops;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::similarity::{max_similarity, SimilarityConfig};
use crate::types::{BBox, ImageTensor, Raster, TargetDetection};

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruthRegion {
    Box(BBox),
    /// Row-major membership, one entry per image pixel.
    Mask {
        width: u32,
        height: u32,
        inside: Vec<bool>,
    },
}

impl GroundTruthRegion {
    pub fn bbox(b: BBox) -> Result<Self> {
        if b.area() <= 0.0 {
            return Err(Error::EmptyRegion(format!("ground-truth box {b:?} has zero area")));
        }
        Ok(Self::Box(b))
    }

    pub fn mask(width: u32, height: u32, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != (width as usize) * (height as usize) {
            return Err(Error::invalid(format!("mask has {} entries for {width}x{height}", inside.len())));
        }
        if !inside.iter().any(|&b| b) {
            return Err(Error::EmptyRegion("ground-truth mask is empty".into()));
        }
        Ok(Self::Mask { width, height, inside })
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        match self {
            Self::Box(b) => b.contains_pixel(x, y),
            Self::Mask { width, height, inside } => x < *width && y < *height && inside[(y * width + x) as usize],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointingOutcome {
    Hit,
    Miss,
}

impl PointingOutcome {
    pub fn is_hit(self) -> bool {
        self == Self::Hit
    }
}

/// Hit iff the most salient pixel (first in row-major order on ties) lies
/// inside the ground truth.
pub fn pointing_game(saliency: &Raster, gt: &GroundTruthRegion) -> Result<PointingOutcome> {
    if let GroundTruthRegion::Mask { width, height, .. } = gt {
        if (*width, *height) != saliency.dims() {
            return Err(Error::dims((*width, *height), saliency.dims()));
        }
    }
    let (x, y) = saliency.argmax();
    Ok(if gt.contains(x, y) { PointingOutcome::Hit } else { PointingOutcome::Miss })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PointingTally {
    pub hits: usize,
    pub misses: usize,
}

impl PointingTally {
    pub fn record(&mut self, outcome: PointingOutcome) {
        match outcome {
            PointingOutcome::Hit => self.hits += 1,
            PointingOutcome::Miss => self.misses += 1,
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        let n = self.hits + self.misses;
        if n == 0 {
            return Err(Error::invalid("pointing-game accuracy over zero samples"));
        }
        Ok(self.hits as f64 / n as f64)
    }
}

impl FromIterator<PointingOutcome> for PointingTally {
    fn from_iter<I: IntoIterator<Item = PointingOutcome>>(iter: I) -> Self {
        let mut t = Self::default();
        iter.into_iter().for_each(|o| t.record(o));
        t
    }
}

/// What removed pixels become (deletion) or what the image starts as
/// (insertion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Baseline {
    Black,
    Blur { sigma: f32 },
}

impl Baseline {
    pub fn render(&self, image: &ImageTensor) -> Result<ImageTensor> {
        match *self {
            Baseline::Black => ImageTensor::filled(image.width(), image.height(), [0, 0, 0]),
            Baseline::Blur { sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
                }
                ImageTensor::from_rgb_image(imageops::blur(&image.to_rgb_image(), sigma))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveConfig {
    pub steps: usize,
    pub baseline: Baseline,
    pub sim_cfg: SimilarityConfig,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { steps: 100, baseline: Baseline::Black, sim_cfg: SimilarityConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCurve {
    points: Vec<(f64, f64)>,
    auc: f64,
}

impl MetricCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let auc = auc(&points)?;
        Ok(Self { points, auc })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn auc(&self) -> f64 {
        self.auc
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,score\n");
        for (f, s) in &self.points {
            out.push_str(&format!("{f},{s}\n"));
        }
        out.push_str(&format!("# auc={}\n", self.auc));
        out
    }
}

/// Trapezoidal area under `(fraction, score)` points.
pub fn auc(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("AUC needs at least 2 points, got {}", points.len())));
    }
    if let Some(w) = points.windows(2).find(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::invalid(format!("curve fractions not increasing at {} -> {}", w[0].0, w[1].0)));
    }
    Ok(points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum())
}

/// Pixel indices from most to least salient; equal values keep row-major order.
pub fn salience_order(saliency: &Raster) -> Vec<usize> {
    let v = saliency.values();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    order
}

/// A map of independent uniform values, the usual random-order reference
/// for deletion and insertion.
pub fn uniform_random_map(width: u32, height: u32, seed: u64) -> Result<Raster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Raster::new(width, height, (0..width * height).map(|_| rng.random::<f32>()).collect())
}

enum Direction {
    Delete,
    Insert,
}

fn perturbation_curve<D: Detector + ?Sized>(
    image: &ImageTensor,
    target: &TargetDetection,
    detector: &mut D,
    saliency: &Raster,
    cfg: &CurveConfig,
    direction: Direction,
) -> Result<MetricCurve> {
    if cfg.steps < 2 {
        return Err(Error::invalid(format!("curve steps must be >= 2, got {}", cfg.steps)));
    }
    if saliency.dims() != image.dims() {
        return Err(Error::dims(image.dims(), saliency.dims()));
    }
    if target.class_count != detector.class_count() {
        return Err(Error::ClassCountMismatch { expected: detector.class_count(), actual: target.class_count });
    }
    let baseline = cfg.baseline.render(image)?;
    let (mut canvas, source) = match direction {
        Direction::Delete => (image.clone(), &baseline),
        Direction::Insert => (baseline.clone(), image),
    };
    let order = salience_order(saliency);
    let n = order.len();
    let tv = target.to_vector();
    let mut points = Vec::with_capacity(cfg.steps + 1);
    let mut done = 0;
    for k in 0..=cfg.steps {
        let upto = k * n / cfg.steps;
        for &p in &order[done..upto] {
            let i = p * 3;
            canvas.pixels_mut()[i..i + 3].copy_from_slice(&source.pixels()[i..i + 3]);
        }
        done = upto;
        let scored = detector.infer(&canvas).and_then(|dets| max_similarity(&tv, &dets, cfg.sim_cfg));
        match scored {
            Ok(s) => points.push((k as f64 / cfg.steps as f64, s)),
            Err(e) => return Err(Error::CurveAborted { partial: points, source: Box::new(e) }),
        }
    }
    MetricCurve::new(points)
}

/// Replaces pixels with the baseline in decreasing salience, `steps`
/// equal tranches, scoring the target after each. Lower AUC is better.
pub fn deletion_curve<D: Detector + ?Sized>(
    image: &ImageTensor,
    target: &TargetDetection,
    detector: &mut D,
    saliency: &Raster,
    cfg: &CurveConfig,
) -> Result<MetricCurve> {
    perturbation_curve(image, target, detector, saliency, cfg, Direction::Delete)
}

/// Starts from the baseline and restores original pixels in decreasing
/// salience. Higher AUC is better.
pub fn insertion_curve<D: Detector + ?Sized>(
    image: &ImageTensor,
    target: &TargetDetection,
    detector: &mut D,
    saliency: &Raster,
    cfg: &CurveConfig,
) -> Result<MetricCurve> {
    perturbation_curve(image, target, detector, saliency, cfg, Direction::Insert)
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(format!("pearson needs two equal samples of >= 2, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("pearson correlation of a constant sample"));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::synthetic::{paint_rect, EchoDetector, RectangleDetector, RectangleParams};
    use crate::detector::{Handshake, ProtocolError};
    use crate::types::DetectionVector;
    use proptest::prelude::*;

    fn spot(w: u32, h: u32, x: u32, y: u32) -> Raster {
        let mut r = Raster::filled(w, h, 0.0).unwrap();
        r.values_mut()[(y * w + x) as usize] = 1.0;
        r
    }

    #[test]
    fn pointing_examples() {
        let gt = GroundTruthRegion::bbox(BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()).unwrap();
        assert_eq!(pointing_game(&spot(64, 64, 5, 5), &gt).unwrap(), PointingOutcome::Hit);
        assert_eq!(pointing_game(&spot(64, 64, 50, 50), &gt).unwrap(), PointingOutcome::Miss);
        let mut inside = vec![false; 16];
        inside[5] = true;
        let m = GroundTruthRegion::mask(4, 4, inside).unwrap();
        assert!(pointing_game(&spot(4, 4, 1, 1), &m).unwrap().is_hit());
        assert!(!pointing_game(&spot(4, 4, 2, 1), &m).unwrap().is_hit());
        assert!(pointing_game(&spot(5, 4, 1, 1), &m).is_err());
        assert!(GroundTruthRegion::mask(2, 2, vec![false; 4]).is_err());
        assert!(GroundTruthRegion::bbox(BBox::new(3.0, 3.0, 3.0, 9.0).unwrap()).is_err());
    }

    #[test]
    fn tally_accuracy() {
        assert!(PointingTally::default().accuracy().is_err());
        let t: PointingTally = [PointingOutcome::Hit, PointingOutcome::Hit, PointingOutcome::Miss].into_iter().collect();
        assert!((t.accuracy().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[(0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]).unwrap(), 1.0);
        assert_eq!(auc(&[(0.0, 1.0), (1.0, 0.0)]).unwrap(), 0.5);
        assert_eq!(auc(&[(0.0, 0.0), (1.0, 0.0)]).unwrap(), 0.0);
        assert!(auc(&[(0.0, 1.0)]).is_err());
        assert!(auc(&[(0.0, 1.0), (0.6, 1.0), (0.5, 1.0)]).is_err());
        assert!(auc(&[(0.0, 1.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn csv_format() {
        let c = MetricCurve::new(vec![(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]).unwrap();
        assert_eq!(c.to_csv(), "fraction,score\n0,1\n0.5,0.5\n1,0\n# auc=0.5\n");
    }

    #[test]
    fn ties_break_row_major() {
        let r = Raster::new(3, 2, vec![0.5, 1.0, 0.5, 1.0, 0.0, 0.5]).unwrap();
        assert_eq!(salience_order(&r), vec![1, 3, 0, 2, 5, 4]);
    }

    fn square() -> (ImageTensor, TargetDetection) {
        let mut img = ImageTensor::filled(32, 32, [120, 120, 120]).unwrap();
        let sq = BBox::new(8.0, 8.0, 24.0, 24.0).unwrap();
        paint_rect(&mut img, &sq, [255, 0, 0]);
        (img, TargetDetection::new(sq, 0, 3).unwrap())
    }

    #[test]
    fn curve_endpoints() {
        let (img, t) = square();
        let mut det = RectangleDetector::new(RectangleParams::default()).unwrap();
        let sal = uniform_random_map(32, 32, 1).unwrap();
        let cfg = CurveConfig { steps: 10, ..Default::default() };
        let base = max_similarity(&t.to_vector(), &det.detect(&img), cfg.sim_cfg).unwrap();
        let black = ImageTensor::filled(32, 32, [0, 0, 0]).unwrap();
        let on_black = max_similarity(&t.to_vector(), &det.detect(&black), cfg.sim_cfg).unwrap();

        let del = deletion_curve(&img, &t, &mut det, &sal, &cfg).unwrap();
        assert_eq!(del.points().len(), 11);
        assert_eq!(del.points()[0], (0.0, base));
        assert_eq!(del.points()[10], (1.0, on_black));
        let ins = insertion_curve(&img, &t, &mut det, &sal, &cfg).unwrap();
        assert_eq!(ins.points()[10], (1.0, base));
        assert_eq!(ins.points()[0].1, on_black);
        assert!((0.0..=1.0).contains(&del.auc()) && (0.0..=1.0).contains(&ins.auc()));

        let blur = CurveConfig { baseline: Baseline::Blur { sigma: 4.0 }, ..cfg };
        let ins = insertion_curve(&img, &t, &mut det, &sal, &blur).unwrap();
        assert_eq!(ins.points()[10], (1.0, base));
    }

    #[test]
    fn constant_detector_flat_curve() {
        let (img, t) = square();
        let d = DetectionVector::new(t.bbox, 0.7, vec![1.0, 0.0, 0.0]).unwrap();
        let mut det = EchoDetector::constant(vec!["a".into(), "b".into(), "c".into()], vec![d]).unwrap();
        let sal = uniform_random_map(32, 32, 0).unwrap();
        let c = deletion_curve(&img, &t, &mut det, &sal, &CurveConfig::default()).unwrap();
        assert_eq!(c.points().len(), 101);
        assert!(c.points().iter().all(|p| p.1 == 0.7));
        assert!((c.auc() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn salient_first_deletion_beats_random() {
        let (img, t) = square();
        let mut det = RectangleDetector::new(RectangleParams::default()).unwrap();
        let mut inside = Raster::filled(32, 32, 0.0).unwrap();
        for y in 8..24 {
            for x in 8..24 {
                inside.values_mut()[y * 32 + x] = 1.0;
            }
        }
        let cfg = CurveConfig { steps: 20, ..Default::default() };
        let good = deletion_curve(&img, &t, &mut det, &inside, &cfg).unwrap().auc();
        let rnd = deletion_curve(&img, &t, &mut det, &uniform_random_map(32, 32, 3).unwrap(), &cfg).unwrap().auc();
        assert!(good < rnd, "{good} vs {rnd}");
    }

    struct Flaky {
        inner: RectangleDetector,
        left: usize,
    }

    impl Detector for Flaky {
        fn handshake(&self) -> &Handshake {
            self.inner.handshake()
        }
        fn infer(&mut self, image: &ImageTensor) -> Result<Vec<DetectionVector>> {
            if self.left == 0 {
                return Err(ProtocolError::ChildExited("gone".into()).into());
            }
            self.left -= 1;
            self.inner.infer(image)
        }
    }

    #[test]
    fn failure_keeps_partial_curve() {
        let (img, t) = square();
        let mut det = Flaky { inner: RectangleDetector::new(RectangleParams::default()).unwrap(), left: 3 };
        let sal = uniform_random_map(32, 32, 0).unwrap();
        match deletion_curve(&img, &t, &mut det, &sal, &CurveConfig { steps: 5, ..Default::default() }) {
            Err(Error::CurveAborted { partial, .. }) => assert_eq!(partial.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn curve_validation() {
        let (img, t) = square();
        let mut det = RectangleDetector::new(RectangleParams::default()).unwrap();
        let sal = uniform_random_map(32, 32, 0).unwrap();
        assert!(deletion_curve(&img, &t, &mut det, &sal, &CurveConfig { steps: 1, ..Default::default() }).is_err());
        let small = uniform_random_map(16, 32, 0).unwrap();
        assert!(deletion_curve(&img, &t, &mut det, &small, &CurveConfig::default()).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn pointing_invariant_to_monotone_rescale(vals in prop::collection::vec(0.0f32..1.0, 36), a in 0.1f32..10.0, b in 0.0f32..5.0) {
            let r = Raster::new(6, 6, vals.clone()).unwrap();
            let scaled = Raster::new(6, 6, vals.iter().map(|v| a * v.powi(3) + b).collect()).unwrap();
            let gt = GroundTruthRegion::bbox(BBox::new(0.0, 0.0, 3.0, 4.0).unwrap()).unwrap();
            // cubing can merge distinct small values; compare only when the argmax is unique
            let (x, y) = r.argmax();
            let top = r.get(x, y);
            prop_assume!(vals.iter().filter(|&&v| v == top).count() == 1);
            prop_assume!(vals.iter().all(|&v| v == top || a * v.powi(3) + b < a * top.powi(3) + b));
            prop_assert_eq!(pointing_game(&r, &gt).unwrap(), pointing_game(&scaled, &gt).unwrap());
        }

        #[test]
        fn auc_in_unit_interval(scores in prop::collection::vec(0.0f64..=1.0, 2..30)) {
            let n = scores.len() - 1;
            let pts: Vec<(f64, f64)> = scores.iter().enumerate().map(|(i, &s)| (i as f64 / n as f64, s)).collect();
            let a = auc(&pts).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }
    }
}
