use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::tensor::LabelMask;

/// Nearest-neighbor upscale applied by [`render_score_map`].
pub const RENDER_SCALE: usize = 16;

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(0, format!("{}: {other}", path.display())),
    }
}

pub fn write_gray(path: impl AsRef<Path>, h: usize, w: usize, pixels: Vec<u8>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| Error::invalid_arg("pixel buffer does not match image size"))?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Reads an 8-bit grayscale image as `(height, width, pixels)`.
pub fn read_gray(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| image_err(path, e))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// Writes a binary mask as 0/255.
pub fn write_binary_mask(path: impl AsRef<Path>, h: usize, w: usize, on: &[bool]) -> Result<()> {
    write_gray(
        path,
        h,
        w,
        on.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
}

/// Reads a binary mask; pixels at or above 128 are foreground.
pub fn read_binary_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let (h, w, px) = read_gray(path)?;
    Ok((h, w, px.into_iter().map(|v| v >= 128).collect()))
}

/// Label maps are stored with the label index as the gray value.
pub fn write_label_mask(path: impl AsRef<Path>, m: &LabelMask) -> Result<()> {
    write_gray(path, m.height(), m.width(), m.labels().to_vec())
}

pub fn read_label_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let (h, w, px) = read_gray(path)?;
    LabelMask::new(h, w, px)
}

/// Maps `[min, max]` of `y` affinely onto `[0, 255]`. A constant map renders
/// as 128.
pub fn score_map_pixels(y: &[f32]) -> Result<Vec<u8>> {
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite score at index {i}"
        )));
    }
    let lo = y.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = y.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if y.is_empty() || hi <= lo {
        return Ok(vec![128; y.len()]);
    }
    let span = hi - lo;
    Ok(y.iter()
        .map(|&v| ((v as f64 - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect())
}

/// Renders an `h x w` score map as a grayscale image upscaled by
/// [`RENDER_SCALE`].
pub fn render_score_map(y: &[f32], h: usize, w: usize, path: impl AsRef<Path>) -> Result<()> {
    if y.len() != h * w {
        return Err(Error::invalid_arg(format!(
            "score map has {} values, expected {h}x{w}",
            y.len()
        )));
    }
    let px = score_map_pixels(y)?;
    let (oh, ow) = (h * RENDER_SCALE, w * RENDER_SCALE);
    let img = GrayImage::from_fn(ow as u32, oh as u32, |x, yy| {
        let (sy, sx) = (yy as usize / RENDER_SCALE, x as usize / RENDER_SCALE);
        Luma([px[sy * w + sx]])
    });
    let path = path.as_ref();
    img.save(path).map_err(|e| image_err(path, e))
}
