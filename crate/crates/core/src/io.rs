//! Tensor file I/O: the raw `BDT1` format and PNG ingestion.
//!
//! `BDT1` layout: magic `42 44 54 31`, version byte `1`, then height, width,
//! channels as little-endian u32, then `h*w*c` little-endian f32 values in
//! row-major `(h, w, c)` order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const BDT1_MAGIC: [u8; 4] = *b"BDT1";
pub const BDT1_VERSION: u8 = 1;

pub fn write_bdt1<W: Write>(img: &ImageTensor, mut w: W) -> Result<()> {
    w.write_all(&BDT1_MAGIC)?;
    w.write_all(&[BDT1_VERSION])?;
    w.write_all(&(img.height() as u32).to_le_bytes())?;
    w.write_all(&(img.width() as u32).to_le_bytes())?;
    w.write_all(&(img.channels() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(img.data().len() * 4);
    for v in img.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_bdt1<R: Read>(mut r: R) -> Result<ImageTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != BDT1_MAGIC {
        return Err(Error::DataFormat("bad BDT1 magic".into()));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != BDT1_VERSION {
        return Err(Error::DataFormat(format!(
            "unsupported BDT1 version {}",
            version[0]
        )));
    }
    let mut dim = [0u8; 4];
    r.read_exact(&mut dim)?;
    let h = u32::from_le_bytes(dim) as usize;
    r.read_exact(&mut dim)?;
    let w = u32::from_le_bytes(dim) as usize;
    r.read_exact(&mut dim)?;
    let c = u32::from_le_bytes(dim) as usize;
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::DataFormat("BDT1 dimensions overflow".into()))?;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageTensor::new(h, w, c, data)
}

/// Loads a tensor from disk, sniffing the format from the leading bytes.
/// PNG pixels are 8-bit values divided by 255.0 exactly. Loaded pixels must
/// lie in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path)
        .map_err(|e| Error::DataFormat(format!("{}: {e}", path.display())))?;
    let img = if bytes.starts_with(&BDT1_MAGIC) {
        read_bdt1(&bytes[..])?
    } else {
        decode_png(&bytes, path)?
    };
    if !img.all_in_unit_range() {
        return Err(Error::DataFormat(format!(
            "{}: pixel outside [0, 1]",
            path.display()
        )));
    }
    Ok(img)
}

pub fn save_bdt1(img: &ImageTensor, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_bdt1(img, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::DataFormat(format!("{}: {e}", path.display())))?;
    match decoded {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let data = g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            ImageTensor::new(h as usize, w as usize, 1, data)
        }
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = rgb.dimensions();
            let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            ImageTensor::new(h as usize, w as usize, 3, data)
        }
        other => {
            // Normalize remaining 8-bit layouts to RGB; reject exotic depths.
            match other.color() {
                image::ColorType::L16 | image::ColorType::Rgb16 | image::ColorType::Rgba16 => {
                    Err(Error::DataFormat(format!(
                        "{}: only 8-bit PNG is supported",
                        path.display()
                    )))
                }
                _ => {
                    let rgb = other.to_rgb8();
                    let (w, h) = rgb.dimensions();
                    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
                    ImageTensor::new(h as usize, w as usize, 3, data)
                }
            }
        }
    }
}
