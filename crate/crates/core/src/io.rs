//! File formats: images via the `image` crate and the `DRSM` float raster.
//!
//! `DRSM` layout, all little-endian:
//!
//! ```text
//! b"DRSM" | u32 width | u32 height | width*height f32, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ImageTensor, Raster};

pub const DRSM_MAGIC: &[u8; 4] = b"DRSM";

pub fn write_drsm<W: Write>(raster: &Raster, mut out: W) -> Result<()> {
    out.write_all(DRSM_MAGIC)?;
    out.write_all(&raster.width().to_le_bytes())?;
    out.write_all(&raster.height().to_le_bytes())?;
    for v in raster.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn drsm_bytes(raster: &Raster) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + raster.values().len() * 4);
    write_drsm(raster, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_drsm<R: Read>(mut input: R) -> Result<Raster> {
    let mut header = [0u8; 12];
    input.read_exact(&mut header)?;
    if &header[..4] != DRSM_MAGIC {
        return Err(Error::invalid("not a DRSM raster (bad magic)"));
    }
    let w = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    let h = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    let n = (w as usize).checked_mul(h as usize).ok_or_else(|| Error::invalid(format!("DRSM dims {w}x{h} overflow")))?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != n * 4 {
        return Err(Error::invalid(format!("DRSM {w}x{h} needs {} payload bytes, found {}", n * 4, body.len())));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Raster::new(w, h, values)
}

pub fn save_drsm(raster: &Raster, path: &Path) -> Result<()> {
    write_drsm(raster, BufWriter::new(File::create(path)?))
}

pub fn load_drsm(path: &Path) -> Result<Raster> {
    read_drsm(BufReader::new(File::open(path)?))
}

/// Any format the `image` crate decodes, converted to 8-bit RGB.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    ImageTensor::from_rgb_image(image::open(path)?.to_rgb8())
}

/// Format chosen by file extension.
pub fn save_image(image: &ImageTensor, path: &Path) -> Result<()> {
    image.to_rgb_image().save(path)?;
    Ok(())
}
