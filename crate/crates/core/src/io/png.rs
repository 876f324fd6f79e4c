//! 8-bit RGB image I/O. Float channels in [0, 1] are clamped and rounded
//! on save; loading maps back to floats by dividing by 255.

use std::path::Path;

use glam::DVec3;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};

pub fn save_rgb(path: &Path, width: usize, height: usize, pixels: &[DVec3]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut raw = Vec::with_capacity(pixels.len() * 3);
    for p in pixels {
        for c in [p.x, p.y, p.z] {
            raw.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf).write_image(
        &raw,
        width as u32,
        height as u32,
        ExtendedColorType::Rgb8,
    )?;
    super::atomic_write(path, &buf)
}

/// Returns (width, height, row-major RGB in [0, 1]).
pub fn load_rgb(path: &Path) -> Result<(usize, usize, Vec<DVec3>)> {
    let img = ImageReader::open(path)?.decode()?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img
        .pixels()
        .map(|p| DVec3::new(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
        .collect();
    Ok((w, h, pixels))
}
