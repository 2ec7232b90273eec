//! Saliency inference: mask the image N times, score every masked image
//! against each target once, and take the weighted sum of the masks.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::debug;
use rayon::prelude::*;
use serde::Serialize;

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::masking::{apply_mask, MaskGenerator, MaskSpec, UPSAMPLING_CONVENTION};
use crate::similarity::{max_similarity, SimilarityConfig};
use crate::types::{BBox, DetectionVector, ImageTensor, Normalization, Raster, SaliencyMap, SaliencyMeta, TargetDetection};

/// Masks per partial sum during aggregation. Fixed so the floating-point
/// summation order never depends on thread count.
const AGGREGATION_CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct ExplainRequest {
    pub image: ImageTensor,
    pub targets: Vec<TargetDetection>,
    pub mask_spec: MaskSpec,
    pub sim_cfg: SimilarityConfig,
    /// Max detector calls in flight (capped by the number of detectors given).
    pub parallelism: usize,
    /// Consecutive mask indices a worker claims at a time.
    pub batch_size: usize,
    pub normalization: Normalization,
}

impl ExplainRequest {
    pub fn new(image: ImageTensor, targets: Vec<TargetDetection>, mask_spec: MaskSpec) -> Self {
        Self {
            image,
            targets,
            mask_spec,
            sim_cfg: SimilarityConfig::default(),
            parallelism: 1,
            batch_size: 16,
            normalization: Normalization::Exposure,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::invalid("at least one target is required"));
        }
        let (w, h) = self.image.dims();
        for (i, t) in self.targets.iter().enumerate() {
            if !t.bbox.intersects_image(w, h) {
                return Err(Error::invalid(format!("target {i} box does not intersect the {w}x{h} image")));
            }
        }
        self.mask_spec.validate()?;
        self.mask_spec.cell_size(w, h)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTiming {
    pub inference: Duration,
    pub aggregation: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct ExplainResult {
    /// One map per target, in request order.
    pub maps: Vec<SaliencyMap>,
    /// `weights[t][i]`: similarity credit of mask `i` for target `t`.
    pub weights: Vec<Vec<f64>>,
    pub detector_calls: usize,
    pub timing: StageTiming,
}

fn check_classes<D: Detector>(targets: &[TargetDetection], detectors: &[D]) -> Result<()> {
    for d in detectors {
        for t in targets {
            if t.class_count != d.class_count() {
                return Err(Error::ClassCountMismatch { expected: d.class_count(), actual: t.class_count });
            }
        }
    }
    Ok(())
}

/// Computes the weight column of every mask, fanning out over `detectors`.
fn score_masks<D: Detector>(req: &ExplainRequest, generator: &MaskGenerator, detectors: &mut [D]) -> Result<Vec<Vec<f64>>> {
    let n = req.mask_spec.count;
    let targets: Vec<DetectionVector> = req.targets.iter().map(TargetDetection::to_vector).collect();
    let batch = req.batch_size.max(1);
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<Error>> = Mutex::new(None);

    let work = |detector: &mut D| -> Vec<(usize, Vec<f64>)> {
        let mut out = Vec::new();
        while !abort.load(Ordering::Relaxed) {
            let start = next.fetch_add(batch, Ordering::Relaxed);
            if start >= n {
                break;
            }
            for i in start..(start + batch).min(n) {
                let mut step = || -> Result<Vec<f64>> {
                    let mask = generator.mask(i)?;
                    let masked = apply_mask(&req.image, &mask.raster)?;
                    let proposals = detector.infer(&masked)?;
                    targets.iter().map(|t| max_similarity(t, &proposals, req.sim_cfg)).collect()
                };
                match step() {
                    Ok(col) => {
                        out.push((i, col));
                        done.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(e) => {
                        abort.store(true, Ordering::Relaxed);
                        failure.lock().expect("failure lock").get_or_insert(e);
                        return out;
                    }
                }
            }
        }
        out
    };

    let workers = req.parallelism.max(1).min(detectors.len());
    let columns: Vec<(usize, Vec<f64>)> = if workers == 1 {
        work(&mut detectors[0])
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = detectors[..workers].iter_mut().map(|d| s.spawn(|| work(d))).collect();
            handles.into_iter().flat_map(|h| h.join().expect("inference worker panicked")).collect()
        })
    };

    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(Error::Aborted { completed: done.load(Ordering::Relaxed), total: n, source: Box::new(e) });
    }
    let mut weights = vec![vec![0.0; n]; targets.len()];
    for (i, col) in columns {
        for (t, w) in col.into_iter().enumerate() {
            weights[t][i] = w;
        }
    }
    Ok(weights)
}

/// `sum_i weights[t][i] * M_i` for each target, optionally divided per
/// pixel by `sum_i M_i`. Summation runs in mask order within fixed-size
/// chunks, and chunks are combined in order, so the result is bit-identical
/// however many threads run it.
pub fn aggregate_masks(generator: &MaskGenerator, weights: &[Vec<f64>], normalization: Normalization) -> Result<Vec<Raster>> {
    let n = generator.len();
    if let Some(row) = weights.iter().find(|r| r.len() != n) {
        return Err(Error::invalid(format!("weight row has {} entries for {n} masks", row.len())));
    }
    let first = generator.mask(0)?;
    let (w, h) = first.raster.dims();
    let px = (w * h) as usize;
    let planes = weights.len() + 1;

    let chunk_sum = |chunk: usize| -> Result<Vec<f64>> {
        let mut acc = vec![0.0f64; planes * px];
        for i in chunk * AGGREGATION_CHUNK..((chunk + 1) * AGGREGATION_CHUNK).min(n) {
            let mask = generator.mask(i)?;
            let m = mask.values();
            for (t, row) in weights.iter().enumerate() {
                let wt = row[i];
                if wt == 0.0 {
                    continue;
                }
                let plane = &mut acc[t * px..(t + 1) * px];
                for (a, &v) in plane.iter_mut().zip(m) {
                    *a += wt * v as f64;
                }
            }
            let exposure = &mut acc[weights.len() * px..];
            for (a, &v) in exposure.iter_mut().zip(m) {
                *a += v as f64;
            }
        }
        Ok(acc)
    };

    let chunks = n.div_ceil(AGGREGATION_CHUNK);
    let window = rayon::current_num_threads().max(1) * 2;
    let mut total = vec![0.0f64; planes * px];
    for start in (0..chunks).step_by(window) {
        let partials: Vec<Vec<f64>> = (start..(start + window).min(chunks)).into_par_iter().map(chunk_sum).collect::<Result<_>>()?;
        for p in partials {
            for (a, v) in total.iter_mut().zip(p) {
                *a += v;
            }
        }
    }

    let exposure = &total[weights.len() * px..];
    (0..weights.len())
        .map(|t| {
            let plane = &total[t * px..(t + 1) * px];
            let values = match normalization {
                Normalization::Raw => plane.iter().map(|&v| v as f32).collect(),
                Normalization::Exposure => plane.iter().zip(exposure).map(|(&v, &e)| if e > 0.0 { (v / e) as f32 } else { 0.0 }).collect(),
            };
            Raster::new(w, h, values)
        })
        .collect()
}

fn meta_for(req: &ExplainRequest) -> SaliencyMeta {
    SaliencyMeta {
        mask_count: req.mask_spec.count,
        mask_prob: req.mask_spec.prob,
        grid: (req.mask_spec.grid_h, req.mask_spec.grid_w),
        seed: req.mask_spec.seed,
        normalization: req.normalization,
        upsampling: UPSAMPLING_CONVENTION.to_string(),
    }
}

/// Saliency maps for every target in `req`. The detector sees each masked
/// image exactly once regardless of the number of targets. With several
/// detectors, up to `req.parallelism` of them are queried concurrently; the
/// output does not depend on how many were used.
pub fn explain<D: Detector>(req: &ExplainRequest, detectors: &mut [D]) -> Result<ExplainResult> {
    if detectors.is_empty() {
        return Err(Error::invalid("no detector sessions given"));
    }
    req.validate()?;
    check_classes(&req.targets, detectors)?;
    let started = Instant::now();
    let generator = MaskGenerator::new(req.mask_spec, req.image.width(), req.image.height())?;

    let weights = score_masks(req, &generator, detectors)?;
    let inference = started.elapsed();
    debug!("scored {} masks for {} targets in {:?}", req.mask_spec.count, req.targets.len(), inference);

    let agg_start = Instant::now();
    let rasters = aggregate_masks(&generator, &weights, req.normalization)?;
    let aggregation = agg_start.elapsed();

    let meta = meta_for(req);
    let maps = rasters.into_iter().map(|r| SaliencyMap::new(r, meta.clone())).collect::<Result<Vec<_>>>()?;
    Ok(ExplainResult {
        maps,
        weights,
        detector_calls: req.mask_spec.count,
        timing: StageTiming { inference, aggregation, total: started.elapsed() },
    })
}

/// Saliency for a box and class the detector did not necessarily produce,
/// such as a missed ground-truth object.
pub fn explain_arbitrary<D: Detector>(
    image: &ImageTensor,
    bbox: BBox,
    class_index: usize,
    mask_spec: MaskSpec,
    sim_cfg: SimilarityConfig,
    detectors: &mut [D],
) -> Result<SaliencyMap> {
    let c = detectors.first().map(|d| d.class_count()).ok_or_else(|| Error::invalid("no detector sessions given"))?;
    let target = TargetDetection::new(bbox, class_index, c)?;
    let mut req = ExplainRequest::new(image.clone(), vec![target], mask_spec);
    req.sim_cfg = sim_cfg;
    let mut result = explain(&req, detectors)?;
    Ok(result.maps.remove(0))
}

/// `a - b` after scaling each map to a maximum of 1.
pub fn saliency_difference(a: &Raster, b: &Raster) -> Result<Raster> {
    if a.dims() != b.dims() {
        return Err(Error::dims(a.dims(), b.dims()));
    }
    let (na, nb) = (a.normalized_by_max(), b.normalized_by_max());
    let values = na.values().iter().zip(nb.values()).map(|(x, y)| x - y).collect();
    Raster::new(a.width(), a.height(), values)
}

/// Exhaustive occlusion: black out one `cell x cell` block at a time and
/// record the similarity drop, clamped at 0. Edge blocks are clipped to the
/// image. Returns a `ceil(W/cell) x ceil(H/cell)` raster.
pub fn occlusion_oracle<D: Detector + ?Sized>(
    image: &ImageTensor,
    target: &TargetDetection,
    detector: &mut D,
    cell: u32,
    sim_cfg: SimilarityConfig,
) -> Result<Raster> {
    if cell == 0 {
        return Err(Error::invalid("occlusion cell size must be >= 1"));
    }
    if target.class_count != detector.class_count() {
        return Err(Error::ClassCountMismatch { expected: detector.class_count(), actual: target.class_count });
    }
    let tv = target.to_vector();
    let base = max_similarity(&tv, &detector.infer(image)?, sim_cfg)?;
    let (w, h) = image.dims();
    let (bw, bh) = (w.div_ceil(cell), h.div_ceil(cell));
    let mut values = Vec::with_capacity((bw * bh) as usize);
    let total = (bw * bh) as usize;
    for by in 0..bh {
        for bx in 0..bw {
            let mut occluded = image.clone();
            for y in by * cell..((by + 1) * cell).min(h) {
                for x in bx * cell..((bx + 1) * cell).min(w) {
                    occluded.put(x, y, [0, 0, 0]);
                }
            }
            let proposals =
                detector.infer(&occluded).map_err(|e| Error::Aborted { completed: values.len(), total, source: Box::new(e) })?;
            let s = max_similarity(&tv, &proposals, sim_cfg)?;
            values.push((base - s).max(0.0) as f32);
        }
    }
    Raster::new(bw, bh, values)
}
