//! Heatmap rendering: blue (low) through green to red (high).

use drise::detector::encode_png;
use drise::{ImageTensor, Raster};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenderMode {
    Colormap,
    /// `alpha * heat + (1 - alpha) * image`.
    Overlay {
        alpha: f32,
    },
}

/// Piecewise-linear ramp through (0,0,255), (0,255,0) and (255,0,0).
/// Channels round half away from zero, so 0.25 maps to (0,128,128).
pub fn colormap(v: f32) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let c = |x: f32| (x * 255.0).round() as u8;
    if v <= 0.5 {
        let t = v / 0.5;
        [0, c(t), c(1.0 - t)]
    } else {
        let t = (v - 0.5) / 0.5;
        [c(t), c(1.0 - t), 0]
    }
}

/// The map scaled to a maximum of 1 and colored.
pub fn heatmap(map: &Raster) -> Result<ImageTensor, CliError> {
    let norm = map.normalized_by_max();
    let px = norm.values().iter().flat_map(|&v| colormap(v)).collect();
    Ok(ImageTensor::new(map.width(), map.height(), px)?)
}

pub fn overlay(map: &Raster, image: &ImageTensor, alpha: f32) -> Result<ImageTensor, CliError> {
    if map.dims() != image.dims() {
        return Err(CliError::Usage(format!("map is {:?} but image is {:?}", map.dims(), image.dims())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CliError::Usage(format!("overlay alpha must be in [0,1], got {alpha}")));
    }
    let heat = heatmap(map)?;
    let px = heat.pixels().iter().zip(image.pixels()).map(|(&h, &i)| (alpha * h as f32 + (1.0 - alpha) * i as f32).round() as u8).collect();
    Ok(ImageTensor::new(image.width(), image.height(), px)?)
}

/// PNG bytes of the rendered map.
pub fn render_heatmap(map: &Raster, mode: RenderMode, image: Option<&ImageTensor>) -> Result<Vec<u8>, CliError> {
    let rendered = match mode {
        RenderMode::Colormap => heatmap(map)?,
        RenderMode::Overlay { alpha } => {
            let image = image.ok_or_else(|| CliError::Usage("overlay rendering needs the input image".into()))?;
            overlay(map, image, alpha)?
        }
    };
    Ok(encode_png(&rendered)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_points() {
        assert_eq!(colormap(0.0), [0, 0, 255]);
        assert_eq!(colormap(0.5), [0, 255, 0]);
        assert_eq!(colormap(1.0), [255, 0, 0]);
        assert_eq!(colormap(0.25), [0, 128, 128]);
        assert_eq!(colormap(0.75), [128, 128, 0]);
        assert_eq!(colormap(-1.0), [0, 0, 255]);
        assert_eq!(colormap(f32::NAN), [0, 0, 255]);
    }

    #[test]
    fn zero_map_renders_blue() {
        let z = Raster::filled(3, 2, 0.0).unwrap();
        assert!(heatmap(&z).unwrap().pixels().chunks(3).all(|p| p == [0, 0, 255]));
    }

    #[test]
    fn heatmap_normalizes_by_max() {
        let m = Raster::new(2, 1, vec![2.0, 4.0]).unwrap();
        let h = heatmap(&m).unwrap();
        assert_eq!(h.get(0, 0), [0, 255, 0]);
        assert_eq!(h.get(1, 0), [255, 0, 0]);
    }

    #[test]
    fn overlay_blends_and_keeps_dims() {
        let m = Raster::new(2, 1, vec![0.0, 1.0]).unwrap();
        let img = ImageTensor::filled(2, 1, [100, 100, 100]).unwrap();
        let o = overlay(&m, &img, 0.5).unwrap();
        assert_eq!(o.dims(), img.dims());
        assert_eq!(o.get(0, 0), [50, 50, 178]);
        assert_eq!(o.get(1, 0), [178, 50, 50]);
        assert_eq!(overlay(&m, &img, 0.0).unwrap(), img);
        assert!(overlay(&m, &ImageTensor::filled(3, 1, [0, 0, 0]).unwrap(), 0.5).is_err());
        assert!(overlay(&m, &img, 1.5).is_err());
        let png = render_heatmap(&m, RenderMode::Overlay { alpha: 0.5 }, Some(&img)).unwrap();
        assert_eq!(drise::detector::decode_png(&png).unwrap(), o);
    }
}
