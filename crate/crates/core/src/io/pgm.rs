//! Binary PGM (P5) output of image magnitudes.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::plan::ImageVolume;

/// 8-bit magnitude image, linearly windowed from 0 to `white` (the image's
/// peak magnitude when `None`).
pub fn encode_pgm(image: &ImageVolume, white: Option<f64>) -> Vec<u8> {
    let peak = white.unwrap_or_else(|| image.data().iter().map(|z| z.norm()).fold(0.0, f64::max));
    let mut out = format!("P5\n{} {}\n255\n", image.cols(), image.rows()).into_bytes();
    out.extend(image.data().iter().map(|z| {
        if peak > 0.0 {
            (z.norm() / peak * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, image: &ImageVolume, white: Option<f64>) -> Result<()> {
    fs::write(path, encode_pgm(image, white))?;
    Ok(())
}
