//! Per-class average saliency: crop each detection with context, scale it
//! to the class's average box shape, and average.
//!
//! Aggregation takes two passes over a dataset. The first fixes the output
//! size per class ([`average_size`]); the second feeds samples through
//! [`ClassAggregate::accumulate`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::resample::Resample;
use crate::types::{BBox, ImageTensor, Raster};

/// Context added on each side, as a fraction of the box width/height.
pub const CONTEXT_MARGIN: f64 = 0.5;

/// Mean width and height of `boxes`.
pub fn average_size(boxes: &[BBox]) -> Result<(f64, f64)> {
    if boxes.is_empty() {
        return Err(Error::invalid("average size of zero boxes"));
    }
    let n = boxes.len() as f64;
    let w = boxes.iter().map(BBox::width).sum::<f64>() / n;
    let h = boxes.iter().map(BBox::height).sum::<f64>() / n;
    Ok((w, h))
}

/// Output raster size for an average box size once context is added.
pub fn context_dims(average: (f64, f64)) -> (u32, u32) {
    let scale = 1.0 + 2.0 * CONTEXT_MARGIN;
    let dim = |v: f64| ((v * scale).round() as u32).max(1);
    (dim(average.0), dim(average.1))
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassAggregate {
    pub class_index: usize,
    pub sample_count: usize,
    pub average_size: (f64, f64),
    #[serde(skip)]
    mean_map: Vec<f64>,
    #[serde(skip)]
    mean_image: Option<Vec<f64>>,
    dims: (u32, u32),
}

impl ClassAggregate {
    /// Empty aggregate. `with_image` also tracks the mean RGB crop.
    pub fn new(class_index: usize, average_size: (f64, f64), with_image: bool) -> Result<Self> {
        if !(average_size.0 > 0.0 && average_size.1 > 0.0 && average_size.0.is_finite() && average_size.1.is_finite()) {
            return Err(Error::invalid(format!("average size must be positive, got {average_size:?}")));
        }
        let dims = context_dims(average_size);
        let px = (dims.0 * dims.1) as usize;
        Ok(Self {
            class_index,
            sample_count: 0,
            average_size,
            mean_map: vec![0.0; px],
            mean_image: with_image.then(|| vec![0.0; px * 3]),
            dims,
        })
    }

    pub fn dims(&self) -> (u32, u32) {
        self.dims
    }

    /// The crop this aggregate would add for one detection: context-expanded,
    /// zero-padded, max-normalized and resized.
    pub fn prepare(&self, saliency: &Raster, bbox: &BBox) -> Result<Raster> {
        if bbox.width() <= 0.0 || bbox.height() <= 0.0 {
            return Err(Error::EmptyRegion(format!("degenerate detection box {bbox:?}")));
        }
        let crop = saliency.crop(&bbox.expanded(CONTEXT_MARGIN), false)?;
        crop.normalized_by_max().resize_bilinear(self.dims.0, self.dims.1)
    }

    pub fn accumulate(&mut self, image: &ImageTensor, saliency: &Raster, bbox: &BBox) -> Result<()> {
        if saliency.dims() != image.dims() {
            return Err(Error::dims(image.dims(), saliency.dims()));
        }
        let sample = self.prepare(saliency, bbox)?;
        let pixels = match self.mean_image {
            Some(_) => Some(image.crop(&bbox.expanded(CONTEXT_MARGIN), false)?.resize_bilinear(self.dims.0, self.dims.1)?),
            None => None,
        };
        self.sample_count += 1;
        let n = self.sample_count as f64;
        for (m, &v) in self.mean_map.iter_mut().zip(sample.values()) {
            *m += (v as f64 - *m) / n;
        }
        if let (Some(mean), Some(px)) = (self.mean_image.as_mut(), pixels) {
            for (m, &v) in mean.iter_mut().zip(px.pixels()) {
                *m += (v as f64 - *m) / n;
            }
        }
        Ok(())
    }

    /// Count-weighted combination of two partial aggregates of one class.
    pub fn merge(&mut self, other: &ClassAggregate) -> Result<()> {
        if other.class_index != self.class_index || other.dims != self.dims {
            return Err(Error::invalid(format!(
                "cannot merge class {} {:?} into class {} {:?}",
                other.class_index, other.dims, self.class_index, self.dims
            )));
        }
        if self.mean_image.is_some() != other.mean_image.is_some() {
            return Err(Error::invalid("cannot merge aggregates with and without mean images"));
        }
        let total = self.sample_count + other.sample_count;
        if other.sample_count == 0 {
            return Ok(());
        }
        let (a, b) = (self.sample_count as f64 / total as f64, other.sample_count as f64 / total as f64);
        let blend = |x: &mut Vec<f64>, y: &[f64]| x.iter_mut().zip(y).for_each(|(p, &q)| *p = a * *p + b * q);
        blend(&mut self.mean_map, &other.mean_map);
        if let (Some(x), Some(y)) = (self.mean_image.as_mut(), other.mean_image.as_ref()) {
            blend(x, y);
        }
        self.sample_count = total;
        Ok(())
    }

    pub fn mean_map(&self) -> Result<Raster> {
        self.require_samples()?;
        Raster::new(self.dims.0, self.dims.1, self.mean_map.iter().map(|&v| v as f32).collect())
    }

    pub fn mean_image(&self) -> Result<Option<ImageTensor>> {
        self.require_samples()?;
        self.mean_image
            .as_ref()
            .map(|m| ImageTensor::new(self.dims.0, self.dims.1, m.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()))
            .transpose()
    }

    fn require_samples(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::invalid(format!("class {} has no samples", self.class_index)));
        }
        Ok(())
    }
}

/// One detection to fold into a class average.
#[derive(Debug, Clone, Copy)]
pub struct AggregateSample<'a> {
    pub image: &'a ImageTensor,
    pub saliency: &'a Raster,
    pub bbox: BBox,
    pub class_index: usize,
}

/// Samples per partial aggregate when folding in parallel.
const MERGE_CHUNK: usize = 8;

/// Both passes over `samples`, one aggregate per class present, ordered by
/// class index. Chunks of samples are averaged in parallel and merged in
/// order, so the result does not depend on thread count.
pub fn aggregate_by_class(samples: &[AggregateSample<'_>], with_image: bool) -> Result<Vec<ClassAggregate>> {
    let mut groups: BTreeMap<usize, Vec<&AggregateSample<'_>>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.class_index).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(class, members)| {
            let boxes: Vec<BBox> = members.iter().map(|s| s.bbox).collect();
            let size = average_size(&boxes)?;
            let partials: Vec<ClassAggregate> = members
                .par_chunks(MERGE_CHUNK)
                .map(|chunk| {
                    let mut agg = ClassAggregate::new(class, size, with_image)?;
                    for s in chunk {
                        agg.accumulate(s.image, s.saliency, &s.bbox)?;
                    }
                    Ok(agg)
                })
                .collect::<Result<_>>()?;
            let mut total = ClassAggregate::new(class, size, with_image)?;
            for p in &partials {
                total.merge(p)?;
            }
            Ok(total)
        })
        .collect()
}

/// Splits detections into small, medium and large by area at the 30th and
/// 70th percentiles. Items are ranked by area (ties keep input order) and an
/// item of rank `r` (1-based) lands below a percentile `p` when its
/// mid-rank `(r - 0.5) / n` is below `p`. Returns input indices per bin.
pub fn scale_bins(areas: &[f64]) -> Result<[Vec<usize>; 3]> {
    let n = areas.len();
    if n < 3 {
        return Err(Error::invalid(format!("scale bins need at least 3 detections, got {n}")));
    }
    if let Some(a) = areas.iter().find(|a| !a.is_finite() || **a < 0.0) {
        return Err(Error::invalid(format!("invalid detection area {a}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| areas[a].total_cmp(&areas[b]));
    // ranks r with 100r - 50 < p*n, i.e. floor((p*n + 49) / 100)
    let cut = |pct: usize| (pct * n + 49) / 100;
    let (c1, c2) = (cut(30), cut(70));
    Ok([order[..c1].to_vec(), order[c1..c2].to_vec(), order[c2..].to_vec()])
}
