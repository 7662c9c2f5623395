//! Stereo samples and the on-disk dataset layout used by the command line:
//! `NNNN_left.png`, `NNNN_right.png`, `NNNN_disp.pfm` (or a 16-bit
//! `NNNN_disp.png`) and an optional `NNNN_occ.png` (nonzero = occluded).

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::harness::pfm::{load_pfm, save_pfm};
use crate::harness::png::{load_kitti_disparity_png, load_rgb, save_rgb};
use crate::head::GroundTruth;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct StereoSample {
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    pub ground_truth: GroundTruth<f32>,
    /// `true` where a left pixel has no visible match in the right image.
    pub occlusion: Option<Vec<bool>>,
    /// File paths or generator seed.
    pub provenance: String,
}

impl StereoSample {
    pub fn new(
        left: Tensor<f32>,
        right: Tensor<f32>,
        ground_truth: GroundTruth<f32>,
        occlusion: Option<Vec<bool>>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let s = left.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 || right.shape() != s {
            return Err(Error::shape(
                "stereo sample",
                format!("left {:?} right {:?}", left.shape(), right.shape()),
            ));
        }
        if ground_truth.disparity.shape() != [1, 1, s[2], s[3]] {
            return Err(Error::shape(
                "stereo sample",
                format!("disparity {:?} for {}x{} images", ground_truth.disparity.shape(), s[2], s[3]),
            ));
        }
        if let Some(occ) = &occlusion {
            if occ.len() != s[2] * s[3] {
                return Err(Error::shape("stereo sample", "occlusion mask size"));
            }
        }
        let bad = ground_truth
            .disparity
            .data()
            .iter()
            .zip(&ground_truth.valid)
            .any(|(d, &ok)| ok && !d.is_finite());
        if bad {
            return Err(Error::invalid("non-finite disparity on a valid pixel"));
        }
        Ok(StereoSample {
            left,
            right,
            ground_truth,
            occlusion,
            provenance: provenance.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.left.dim(2)
    }

    pub fn width(&self) -> usize {
        self.left.dim(3)
    }

    /// The `h x w` window with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<StereoSample> {
        if h == 0 || w == 0 || y + h > self.height() || x + w > self.width() {
            return Err(Error::Geometry(format!(
                "crop {h}x{w} at ({y}, {x}) leaves the {}x{} image",
                self.height(),
                self.width()
            )));
        }
        let full_w = self.width();
        let window = |data: &[f32], planes: usize| -> Vec<f32> {
            let plane = self.height() * full_w;
            (0..planes)
                .flat_map(|p| (y..y + h).flat_map(move |r| (x..x + w).map(move |c| p * plane + r * full_w + c)))
                .map(|i| data[i])
                .collect()
        };
        let mask = |m: &[bool]| -> Vec<bool> {
            (y..y + h).flat_map(|r| (x..x + w).map(move |c| m[r * full_w + c])).collect()
        };
        StereoSample::new(
            Tensor::from_vec(&[1, 3, h, w], window(self.left.data(), 3))?,
            Tensor::from_vec(&[1, 3, h, w], window(self.right.data(), 3))?,
            GroundTruth::with_mask(
                Tensor::from_vec(&[1, 1, h, w], window(self.ground_truth.disparity.data(), 1))?,
                mask(&self.ground_truth.valid),
            )?,
            self.occlusion.as_deref().map(mask),
            format!("{} crop {h}x{w}@{y},{x}", self.provenance),
        )
    }

    /// Ground truth cast to `T`, keeping only pixels with `d < d_max`.
    pub fn ground_truth_within<T: Real>(&self, d_max: usize) -> Result<GroundTruth<T>> {
        let hi = d_max as f32;
        let valid = self
            .ground_truth
            .valid
            .iter()
            .zip(self.ground_truth.disparity.data())
            .map(|(&ok, &d)| ok && d > 0.0 && d < hi)
            .collect();
        GroundTruth::with_mask(self.ground_truth.disparity.cast(), valid)
    }
}

fn stem(dir: &Path, index: usize, suffix: &str) -> PathBuf {
    dir.join(format!("{index:04}_{suffix}"))
}

/// Writes one sample under `dir` with index `index`.
pub fn save_sample(dir: impl AsRef<Path>, index: usize, sample: &StereoSample) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_rgb(stem(dir, index, "left.png"), &sample.left)?;
    save_rgb(stem(dir, index, "right.png"), &sample.right)?;
    let disp = with_invalid_as_inf(&sample.ground_truth);
    save_pfm(stem(dir, index, "disp.pfm"), &disp)?;
    if let Some(occ) = &sample.occlusion {
        let (h, w) = (sample.height() as u32, sample.width() as u32);
        let img = GrayImage::from_fn(w, h, |x, y| Luma([if occ[(y * w + x) as usize] { 255 } else { 0 }]));
        img.save(stem(dir, index, "occ.png"))?;
    }
    Ok(())
}

// Invalid pixels are written as +inf, the usual "no data" marker in PFM
// ground truth.
fn with_invalid_as_inf(gt: &GroundTruth<f32>) -> Tensor<f32> {
    let data = gt
        .disparity
        .data()
        .iter()
        .zip(&gt.valid)
        .map(|(&d, &ok)| if ok { d } else { f32::INFINITY })
        .collect();
    Tensor::from_vec(gt.disparity.shape(), data).expect("same shape")
}

/// Loads every complete sample in `dir`, ordered by index.
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<Vec<StereoSample>> {
    let dir = dir.as_ref();
    let mut indices: Vec<usize> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix("_left.png")?.parse().ok()
        })
        .collect();
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::invalid(format!("no *_left.png files in {}", dir.display())));
    }
    indices.into_iter().map(|i| load_sample(dir, i)).collect()
}

pub fn load_sample(dir: &Path, index: usize) -> Result<StereoSample> {
    let left_path = stem(dir, index, "left.png");
    let left = load_rgb(&left_path)?;
    let right = load_rgb(stem(dir, index, "right.png"))?;
    let pfm = stem(dir, index, "disp.pfm");
    let ground_truth = if pfm.exists() {
        let d = load_pfm(&pfm)?;
        let valid = d.data().iter().map(|v| v.is_finite() && *v > 0.0).collect();
        let clean = d.map(|v| if v.is_finite() { v } else { 0.0 });
        GroundTruth::with_mask(clean, valid)?
    } else {
        load_kitti_disparity_png(stem(dir, index, "disp.png"))?
    };
    let occ_path = stem(dir, index, "occ.png");
    let occlusion = if occ_path.exists() {
        Some(image::open(&occ_path)?.to_luma8().pixels().map(|p| p[0] > 0).collect())
    } else {
        None
    };
    StereoSample::new(left, right, ground_truth, occlusion, left_path.display().to_string())
}
