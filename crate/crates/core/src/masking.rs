//! Random mask generation and application.
//!
//! A mask starts as an `h x w` Bernoulli grid, is bilinearly upsampled to a
//! `(h+1)*C_H x (w+1)*C_W` canvas (`C = floor(image / grid)`), and an image
//! sized window is cropped at a random offset in `[0, C_H) x [0, C_W)`.
//!
//! Randomness is counter-based: mask `i` draws from a ChaCha stream selected
//! by `i` under the `MaskSpec` seed, so any mask can be regenerated on its own
//! and generation order never affects the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::{axis_tap, lerp, AxisTap};
use crate::types::{ImageTensor, Raster};

/// Stream id bit reserved for crop-offset draws, so they never share a
/// stream with grid cells.
const OFFSET_STREAM: u64 = 1 << 63;

pub const UPSAMPLING_CONVENTION: &str = "bilinear, grid samples at cell corners of the upsampled canvas, pixel-center sampling, edge clamp";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub grid_h: u32,
    pub grid_w: u32,
    pub prob: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { grid_h: 16, grid_w: 16, prob: 0.5, count: 5000, seed: 0 }
    }
}

impl MaskSpec {
    pub fn new(grid_h: u32, grid_w: u32, prob: f64, count: usize, seed: u64) -> Result<Self> {
        let spec = Self { grid_h, grid_w, prob, count, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prob > 0.0 && self.prob < 1.0) {
            return Err(Error::Config(format!("mask probability must be in (0,1), got {}", self.prob)));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::Config("mask grid dims must be >= 1".into()));
        }
        if self.count == 0 {
            return Err(Error::Config("mask count must be >= 1".into()));
        }
        Ok(())
    }

    /// Upsampled cell size `(C_H, C_W)` for a `width x height` image, after
    /// checking that the grid can cover it.
    pub fn cell_size(&self, width: u32, height: u32) -> Result<(u32, u32)> {
        let check = |axis: &str, img: u32, grid: u32| -> Result<u32> {
            let cell = img / grid;
            if cell == 0 {
                return Err(Error::Config(format!("image {axis} {img} is smaller than the mask grid {axis} {grid}")));
            }
            if img % grid > cell {
                return Err(Error::Config(format!(
                    "image {axis} {img} leaves a remainder of {} over a {grid}-cell grid, more than the \
                     cell size {cell}; use a smaller grid or an image of at least {} pixels",
                    img % grid,
                    grid * grid
                )));
            }
            Ok(cell)
        };
        Ok((check("height", height, self.grid_h)?, check("width", width, self.grid_w)?))
    }
}

/// Binary `rows x cols` grid, row-major, cells are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    pub rows: u32,
    pub cols: u32,
    pub cells: Vec<u8>,
}

impl MaskGrid {
    pub fn new(rows: u32, cols: u32, cells: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || cells.len() != (rows * cols) as usize {
            return Err(Error::invalid(format!("grid of {} cells is not {rows}x{cols}", cells.len())));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::invalid("grid cells must be 0 or 1"));
        }
        Ok(Self { rows, cols, cells })
    }
}

/// Crop offset into the upsampled canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropOffset {
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub raster: Raster,
    pub index: usize,
    pub offset: CropOffset,
}

impl Mask {
    pub fn values(&self) -> &[f32] {
        self.raster.values()
    }
}

pub fn sample_grid(spec: &MaskSpec, index: usize) -> Result<MaskGrid> {
    if index >= spec.count {
        return Err(Error::invalid(format!("mask index {index} out of range for {} masks", spec.count)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let cells = (0..spec.grid_h * spec.grid_w).map(|_| u8::from(rng.random::<f64>() < spec.prob)).collect();
    Ok(MaskGrid { rows: spec.grid_h, cols: spec.grid_w, cells })
}

fn sample_offset(spec: &MaskSpec, index: usize, cell: (u32, u32)) -> CropOffset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(OFFSET_STREAM | index as u64);
    CropOffset { row: rng.random_range(0..cell.0), col: rng.random_range(0..cell.1) }
}

/// Separable bilinear evaluation of `grid` over a window, using precomputed
/// taps. Arithmetic order matches `Resample::resize_bilinear` exactly.
fn render(grid: &MaskGrid, row_taps: &[AxisTap], col_taps: &[AxisTap]) -> Vec<f32> {
    let cols = grid.cols as usize;
    let width = col_taps.len();
    let lines: Vec<Vec<f32>> =
        grid.cells.chunks_exact(cols).map(|row| col_taps.iter().map(|t| lerp(row[t.i0] as f32, row[t.i1] as f32, t.t)).collect()).collect();
    let mut out = Vec::with_capacity(width * row_taps.len());
    for ty in row_taps {
        let (top, bottom) = (&lines[ty.i0], &lines[ty.i1]);
        out.extend(top.iter().zip(bottom).map(|(&a, &b)| lerp(a, b, ty.t)));
    }
    out
}

/// Upsample `grid` onto the canvas for a `width x height` image and crop
/// the image-sized window at `offset`.
pub fn upsample_and_crop(grid: &MaskGrid, width: u32, height: u32, offset: CropOffset) -> Result<Raster> {
    let spec = MaskSpec { grid_h: grid.rows, grid_w: grid.cols, prob: 0.5, count: 1, seed: 0 };
    let (ch, cw) = spec.cell_size(width, height)?;
    if offset.row >= ch || offset.col >= cw {
        return Err(Error::invalid(format!("crop offset ({}, {}) outside [0,{ch})x[0,{cw})", offset.row, offset.col)));
    }
    let canvas_h = ((grid.rows + 1) * ch) as usize;
    let canvas_w = ((grid.cols + 1) * cw) as usize;
    let row_taps: Vec<AxisTap> = (0..height as usize).map(|y| axis_tap(grid.rows as usize, canvas_h, offset.row as usize + y)).collect();
    let col_taps: Vec<AxisTap> = (0..width as usize).map(|x| axis_tap(grid.cols as usize, canvas_w, offset.col as usize + x)).collect();
    Raster::new(width, height, render(grid, &row_taps, &col_taps))
}

/// Random-access mask source for one image size.
#[derive(Debug, Clone)]
pub struct MaskGenerator {
    spec: MaskSpec,
    width: u32,
    height: u32,
    cell: (u32, u32),
    // taps for every canvas row/col any offset can reach
    row_taps: Vec<AxisTap>,
    col_taps: Vec<AxisTap>,
}

impl MaskGenerator {
    pub fn new(spec: MaskSpec, width: u32, height: u32) -> Result<Self> {
        spec.validate()?;
        let cell = spec.cell_size(width, height)?;
        let canvas_h = ((spec.grid_h + 1) * cell.0) as usize;
        let canvas_w = ((spec.grid_w + 1) * cell.1) as usize;
        let row_taps = (0..(height + cell.0) as usize).map(|d| axis_tap(spec.grid_h as usize, canvas_h, d)).collect();
        let col_taps = (0..(width + cell.1) as usize).map(|d| axis_tap(spec.grid_w as usize, canvas_w, d)).collect();
        Ok(Self { spec, width, height, cell, row_taps, col_taps })
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.count
    }

    pub fn is_empty(&self) -> bool {
        self.spec.count == 0
    }

    pub fn cell_size(&self) -> (u32, u32) {
        self.cell
    }

    pub fn mask(&self, index: usize) -> Result<Mask> {
        let grid = sample_grid(&self.spec, index)?;
        let offset = sample_offset(&self.spec, index, self.cell);
        let (r0, c0) = (offset.row as usize, offset.col as usize);
        let values = render(&grid, &self.row_taps[r0..r0 + self.height as usize], &self.col_taps[c0..c0 + self.width as usize]);
        Ok(Mask { raster: Raster::new(self.width, self.height, values)?, index, offset })
    }

    pub fn iter(&self) -> impl Iterator<Item = Mask> + '_ {
        (0..self.spec.count).map(move |i| self.mask(i).expect("index within count"))
    }
}

/// Lazily yields the `spec.count` masks for a `width x height` image.
pub fn generate_masks(spec: MaskSpec, width: u32, height: u32) -> Result<impl Iterator<Item = Mask>> {
    let generator = MaskGenerator::new(spec, width, height)?;
    Ok((0..spec.count).map(move |i| generator.mask(i).expect("index within count")))
}

/// Element-wise product, rounded back to 8 bits.
pub fn apply_mask(image: &ImageTensor, mask: &Raster) -> Result<ImageTensor> {
    if image.dims() != mask.dims() {
        return Err(Error::dims(image.dims(), mask.dims()));
    }
    let mut px = Vec::with_capacity(image.pixels().len());
    for (rgb, &m) in image.pixels().chunks_exact(3).zip(mask.values()) {
        for &v in rgb {
            px.push((v as f32 * m).round() as u8);
        }
    }
    ImageTensor::new(image.width(), image.height(), px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resample::Resample;
    use crate::types::BBox;
    use proptest::prelude::*;

    fn spec(h: u32, w: u32, count: usize, seed: u64) -> MaskSpec {
        MaskSpec::new(h, w, 0.5, count, seed).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(MaskSpec::new(16, 16, 0.0, 10, 0).is_err());
        assert!(MaskSpec::new(16, 16, 1.0, 10, 0).is_err());
        assert!(MaskSpec::new(0, 16, 0.5, 10, 0).is_err());
        assert!(MaskSpec::new(16, 16, 0.5, 0, 0).is_err());
        let d = MaskSpec::default();
        assert_eq!((d.count, d.prob, d.grid_h, d.grid_w), (5000, 0.5, 16, 16));
    }

    #[test]
    fn coverage_precondition() {
        let s = spec(16, 16, 1, 0);
        assert_eq!(s.cell_size(64, 64).unwrap(), (4, 4));
        // 40 = 2*16 + 8: remainder 8 > cell 2
        let err = s.cell_size(40, 64).unwrap_err();
        assert!(err.to_string().contains("remainder"), "{err}");
        assert!(s.cell_size(10, 64).is_err());
        // 256 = 16^2 always fits
        assert!(s.cell_size(256 + 15, 256).is_ok());
    }

    #[test]
    fn grid_is_deterministic() {
        let s = spec(16, 16, 10, 42);
        assert_eq!(sample_grid(&s, 3).unwrap(), sample_grid(&s, 3).unwrap());
        assert!(sample_grid(&s, 10).is_err());
    }

    #[test]
    fn different_seeds_give_different_grids() {
        let a = sample_grid(&spec(16, 16, 1, 5), 0).unwrap();
        let b = sample_grid(&spec(16, 16, 1, 6), 0).unwrap();
        assert!(a.cells.iter().zip(&b.cells).any(|(x, y)| x != y));
    }

    #[test]
    fn grid_density_matches_probability() {
        let s = spec(16, 16, 10_000, 1);
        let total: u64 = (0..s.count).map(|i| sample_grid(&s, i).unwrap().cells.iter().map(|&c| c as u64).sum::<u64>()).sum();
        let mean = total as f64 / (s.count as f64 * 256.0);
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn constant_grids_give_constant_masks() {
        for v in [0u8, 1] {
            let g = MaskGrid::new(4, 4, vec![v; 16]).unwrap();
            let m = upsample_and_crop(&g, 32, 32, CropOffset { row: 3, col: 1 }).unwrap();
            assert!(m.values().iter().all(|&x| x == v as f32));
        }
    }

    #[test]
    fn single_cell_matches_hand_bilinear_ramp() {
        // 2x2 grid, one hot corner; H=W=8 -> cell 4, canvas 12x12
        let g = MaskGrid::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        let m = upsample_and_crop(&g, 8, 8, CropOffset { row: 0, col: 0 }).unwrap();
        let coord = |d: u32| ((d as f64 + 0.5) * 2.0 / 12.0 - 0.5).clamp(0.0, 1.0);
        for y in 0..8 {
            for x in 0..8 {
                let want = (1.0 - coord(x)) * (1.0 - coord(y));
                assert!((m.get(x, y) as f64 - want).abs() < 1e-6, "({x},{y})");
            }
        }
        // the first three rows/cols sit before the first grid sample
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(2, 2), 1.0);
    }

    #[test]
    fn offsets_out_of_range_rejected() {
        let g = MaskGrid::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert!(upsample_and_crop(&g, 8, 8, CropOffset { row: 4, col: 0 }).is_err());
        assert!(upsample_and_crop(&g, 8, 8, CropOffset { row: 0, col: 4 }).is_err());
    }

    #[test]
    fn generator_matches_resize_then_crop() {
        let s = spec(4, 5, 20, 9);
        let gen = MaskGenerator::new(s, 40, 32).unwrap();
        let (ch, cw) = gen.cell_size();
        for i in 0..s.count {
            let m = gen.mask(i).unwrap();
            let g = sample_grid(&s, i).unwrap();
            let grid = Raster::new(g.cols, g.rows, g.cells.iter().map(|&c| c as f32).collect()).unwrap();
            let canvas = grid.resize_bilinear((g.cols + 1) * cw, (g.rows + 1) * ch).unwrap();
            let (r, c) = (m.offset.row as f64, m.offset.col as f64);
            let window = canvas.crop(&BBox::new(c, r, c + 40.0, r + 32.0).unwrap(), false).unwrap();
            assert_eq!(window, m.raster, "mask {i}");
        }
    }

    #[test]
    fn sequence_is_reproducible_in_any_order() {
        let s = spec(8, 8, 30, 3);
        let a: Vec<Mask> = generate_masks(s, 64, 64).unwrap().collect();
        let b: Vec<Mask> = generate_masks(s, 64, 64).unwrap().collect();
        assert_eq!(a, b);
        let gen = MaskGenerator::new(s, 64, 64).unwrap();
        for i in (0..s.count).rev() {
            assert_eq!(gen.mask(i).unwrap(), a[i]);
        }
    }

    #[test]
    fn mean_mask_value_is_probability() {
        let s = spec(16, 16, 2000, 11);
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for m in generate_masks(s, 64, 64).unwrap() {
            sum += m.values().iter().map(|&v| v as f64).sum::<f64>();
            n += m.values().len();
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn every_pixel_is_covered() {
        let s = spec(16, 16, 100, 0);
        let mut covered = vec![false; 64 * 64];
        for m in generate_masks(s, 64, 64).unwrap() {
            for (c, &v) in covered.iter_mut().zip(m.values()) {
                *c |= v > 0.5;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn apply_mask_examples() {
        let img = ImageTensor::filled(3, 2, [200, 17, 255]).unwrap();
        let ones = Raster::filled(3, 2, 1.0).unwrap();
        assert_eq!(apply_mask(&img, &ones).unwrap(), img);
        let zeros = Raster::filled(3, 2, 0.0).unwrap();
        assert!(apply_mask(&img, &zeros).unwrap().pixels().iter().all(|&v| v == 0));
        let half = Raster::filled(3, 2, 0.5).unwrap();
        assert_eq!(apply_mask(&img, &half).unwrap().get(0, 0)[0], 100);
        assert!(apply_mask(&img, &Raster::filled(2, 3, 1.0).unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn masks_in_range_and_smooth(seed in any::<u64>(), gh in 2u32..9, gw in 2u32..9, idx in 0usize..50) {
            let s = MaskSpec::new(gh, gw, 0.5, 50, seed).unwrap();
            let (w, h) = (gw * gw + 7, gh * gh + 3);
            let gen = MaskGenerator::new(s, w, h).unwrap();
            let m = gen.mask(idx).unwrap();
            let (ch, cw) = gen.cell_size();
            let bound = 1.0 / ch.min(cw) as f32 + 1e-6;
            prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
            for y in 0..h {
                for x in 0..w {
                    let v = m.raster.get(x, y);
                    if x + 1 < w { prop_assert!((v - m.raster.get(x + 1, y)).abs() <= bound); }
                    if y + 1 < h { prop_assert!((v - m.raster.get(x, y + 1)).abs() <= bound); }
                }
            }
        }

        #[test]
        fn masked_pixels_never_brighten(px in prop::collection::vec(any::<u8>(), 48), seed in any::<u64>()) {
            let img = ImageTensor::new(4, 4, px).unwrap();
            let gen = MaskGenerator::new(MaskSpec::new(2, 2, 0.5, 1, seed).unwrap(), 4, 4).unwrap();
            let out = apply_mask(&img, &gen.mask(0).unwrap().raster).unwrap();
            prop_assert!(out.pixels().iter().zip(img.pixels()).all(|(a, b)| a <= b));
        }
    }
}
