//! Cropping and bilinear resizing for images and float rasters.
//!
//! Resizing samples at pixel centers: output pixel `d` maps to source
//! coordinate `(d + 0.5) * src/dst - 0.5`, clamped to the source extent.
//! Mask upsampling uses the same taps, so both paths agree bit for bit.

use crate::error::{Error, Result};
use crate::types::{BBox, ImageTensor, Raster};

/// Source indices and blend factor for one output coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AxisTap {
    pub i0: usize,
    pub i1: usize,
    pub t: f32,
}

/// Tap for output index `d` when resizing `src_len` samples to `dst_len`.
/// `d` may exceed `dst_len`; the source coordinate then saturates at the edge.
pub(crate) fn axis_tap(src_len: usize, dst_len: usize, d: usize) -> AxisTap {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    AxisTap { i0, i1, t: (s - i0 as f64) as f32 }
}

pub(crate) fn axis_taps(src_len: usize, dst_len: usize) -> Vec<AxisTap> {
    (0..dst_len).map(|d| axis_tap(src_len, dst_len, d)).collect()
}

#[inline]
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    // a + (b - a) * t keeps constant inputs exactly constant
    a + (b - a) * t
}

/// Bilinear resize of `channels` interleaved planes.
fn resize_planes(src: &[f32], sw: usize, sh: usize, channels: usize, dw: usize, dh: usize) -> Vec<f32> {
    let xt = axis_taps(sw, dw);
    let yt = axis_taps(sh, dh);
    let mut out = Vec::with_capacity(dw * dh * channels);
    for ty in &yt {
        let r0 = ty.i0 * sw;
        let r1 = ty.i1 * sw;
        for tx in &xt {
            for c in 0..channels {
                let at = |row: usize, col: usize| src[(row + col) * channels + c];
                let top = lerp(at(r0, tx.i0), at(r0, tx.i1), tx.t);
                let bottom = lerp(at(r1, tx.i0), at(r1, tx.i1), tx.t);
                out.push(lerp(top, bottom, ty.t));
            }
        }
    }
    out
}

/// Integer pixel window of a region, as `(x0, y0, x1, y1)` half-open.
fn pixel_window(region: &BBox) -> (i64, i64, i64, i64) {
    (region.x1.round() as i64, region.y1.round() as i64, region.x2.round() as i64, region.y2.round() as i64)
}

fn crop_window(width: u32, height: u32, region: &BBox, clamp: bool) -> Result<(i64, i64, i64, i64)> {
    let (mut x0, mut y0, mut x1, mut y1) = pixel_window(region);
    if clamp {
        x0 = x0.max(0);
        y0 = y0.max(0);
        x1 = x1.min(width as i64);
        y1 = y1.min(height as i64);
    }
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::EmptyRegion(format!(
            "crop of ({},{},{},{}) from {width}x{height} image is empty",
            region.x1, region.y1, region.x2, region.y2
        )));
    }
    Ok((x0, y0, x1, y1))
}

fn crop_planes<T: Copy + Default>(src: &[T], width: u32, height: u32, channels: usize, window: (i64, i64, i64, i64)) -> Vec<T> {
    let (x0, y0, x1, y1) = window;
    let mut out = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize * channels);
    for y in y0..y1 {
        for x in x0..x1 {
            let inside = x >= 0 && y >= 0 && x < width as i64 && y < height as i64;
            for c in 0..channels {
                out.push(if inside { src[(y as usize * width as usize + x as usize) * channels + c] } else { T::default() });
            }
        }
    }
    out
}

/// Crop and bilinear resize, shared by images and float rasters.
pub trait Resample: Sized {
    /// Sub-raster of `region` with coordinates rounded to whole pixels. With
    /// `clamp` the region is intersected with the frame; without it, pixels
    /// outside the frame are zero.
    fn crop(&self, region: &BBox, clamp: bool) -> Result<Self>;

    fn resize_bilinear(&self, new_width: u32, new_height: u32) -> Result<Self>;
}

impl Resample for ImageTensor {
    fn crop(&self, region: &BBox, clamp: bool) -> Result<Self> {
        let win = crop_window(self.width(), self.height(), region, clamp)?;
        let px = crop_planes(self.pixels(), self.width(), self.height(), 3, win);
        ImageTensor::new((win.2 - win.0) as u32, (win.3 - win.1) as u32, px)
    }

    fn resize_bilinear(&self, new_width: u32, new_height: u32) -> Result<Self> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::invalid("resize target dims must be >= 1"));
        }
        if self.dims() == (new_width, new_height) {
            return Ok(self.clone());
        }
        let src: Vec<f32> = self.pixels().iter().map(|&v| v as f32).collect();
        let out = resize_planes(&src, self.width() as usize, self.height() as usize, 3, new_width as usize, new_height as usize);
        let px = out.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        ImageTensor::new(new_width, new_height, px)
    }
}

impl Resample for Raster {
    fn crop(&self, region: &BBox, clamp: bool) -> Result<Self> {
        let win = crop_window(self.width(), self.height(), region, clamp)?;
        let v = crop_planes(self.values(), self.width(), self.height(), 1, win);
        Raster::new((win.2 - win.0) as u32, (win.3 - win.1) as u32, v)
    }

    fn resize_bilinear(&self, new_width: u32, new_height: u32) -> Result<Self> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::invalid("resize target dims must be >= 1"));
        }
        let out = resize_planes(self.values(), self.width() as usize, self.height() as usize, 1, new_width as usize, new_height as usize);
        Raster::new(new_width, new_height, out)
    }
}
