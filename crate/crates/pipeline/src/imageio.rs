//! PNG / PPM reading and writing, and conversion to network tensors.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use uvnet_core::{Real, RgbImage, Shape, Tensor};

use crate::error::{PipelineError, Result};
use crate::fsutil;

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| PipelineError::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    Ok(RgbImage::new(h as usize, w as usize, pixels)?)
}

/// Format follows the extension (`.png`, `.ppm`).
pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fsutil::create_dir(dir)?;
    }
    let raw: Vec<u8> = img.pixels.iter().flatten().copied().collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw).expect("buffer size");
    buf.save(path).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Grayscale PNG of a `[0, 1]` plane (values clamped).
pub fn save_plane<T: Real>(path: &Path, plane: &[T], height: usize, width: usize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fsutil::create_dir(dir)?;
    }
    let raw: Vec<u8> = plane
        .iter()
        .map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw).expect("buffer size");
    buf.save(path).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `(1, 3, H, W)` tensor with intensities scaled to `[0, 1]`.
pub fn to_tensor<T: Real>(img: &RgbImage) -> Tensor<T> {
    let (h, w) = (img.height, img.width);
    let mut data = vec![T::zero(); 3 * h * w];
    for (i, p) in img.pixels.iter().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = T::lit(p[c] as f64 / 255.0);
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("shape matches data")
}
