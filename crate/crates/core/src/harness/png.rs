//! PNG input and output: RGB images, 16-bit KITTI disparity and rendered
//! disparity previews.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::harness::pfm::plane_dims;
use crate::head::GroundTruth;
use crate::tensor::{Real, Tensor};

/// Loads an image as `[1, 3, H, W]` with values in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data)
}

/// Saves `[1, 3, H, W]` values in `[0, 1]` as 8-bit RGB.
pub fn save_rgb(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    let [1, 3, h, w] = *img.shape() else {
        return Err(Error::shape("save_rgb", format!("expected [1, 3, H, W], got {:?}", img.shape())));
    };
    let d = img.data();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| (d[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([at(0), at(1), at(2)])
    });
    out.save(path.as_ref())?;
    Ok(())
}

/// 16-bit disparity: `d = stored / 256`, stored 0 means no measurement.
pub fn load_kitti_disparity_png(path: impl AsRef<Path>) -> Result<GroundTruth<f32>> {
    let img = image::open(path.as_ref())?;
    let img = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::format(
                "KITTI disparity PNG",
                format!("expected 16-bit grayscale, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u16> = img.into_raw();
    let disparity = Tensor::from_vec(&[1, 1, h, w], raw.iter().map(|&v| v as f32 / 256.0).collect())?;
    GroundTruth::with_mask(disparity, raw.iter().map(|&v| v > 0).collect())
}

/// Writes valid pixels as `round(256 d)`, clamped to the 16-bit range, and
/// invalid pixels as 0.
pub fn save_kitti_disparity_png(path: impl AsRef<Path>, gt: &GroundTruth<f32>) -> Result<()> {
    let (h, w) = plane_dims(&gt.disparity)?;
    let raw: Vec<u16> = gt
        .disparity
        .data()
        .iter()
        .zip(&gt.valid)
        .map(|(&d, &ok)| if ok { (d as f64 * 256.0).round().clamp(0.0, 65535.0) as u16 } else { 0 })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
    img.save(path.as_ref())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    Color,
    Gray,
}

// Control points of a blue-cyan-green-yellow-red ramp.
const RAMP: [[f64; 3]; 5] = [
    [0.19, 0.07, 0.55],
    [0.11, 0.60, 0.85],
    [0.35, 0.80, 0.35],
    [0.98, 0.82, 0.15],
    [0.85, 0.12, 0.10],
];

/// `t` in `[0, 1]` to an RGB colour along the ramp.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let v = RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f;
        *o = (v * 255.0).round() as u8;
    }
    out
}

/// Renders `d / d_max` (clamped to `[0, 1]`) as an 8-bit image.
pub fn render_disparity_png<T: Real>(map: &Tensor<T>, d_max: f64, path: impl AsRef<Path>, mode: RenderMode) -> Result<()> {
    if !(d_max > 0.0) {
        return Err(Error::invalid("render range must be positive"));
    }
    let (h, w) = plane_dims(map)?;
    let level = |x: u32, y: u32| (map.data()[y as usize * w + x as usize].to_f64() / d_max).clamp(0.0, 1.0);
    match mode {
        RenderMode::Gray => {
            GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([(level(x, y) * 255.0).round() as u8])).save(path.as_ref())?
        }
        RenderMode::Color => RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(colormap(level(x, y)))).save(path.as_ref())?,
    }
    Ok(())
}

/// Inverse of the grayscale rendering: `v / 255 * d_max`.
pub fn load_gray_render(path: impl AsRef<Path>, d_max: f64) -> Result<Tensor<f32>> {
    let img = image::open(path.as_ref())?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| (p[0] as f64 / 255.0 * d_max) as f32).collect();
    Tensor::from_vec(&[1, 1, h, w], data)
}
