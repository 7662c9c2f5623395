//! WebAssembly bindings for the static page in `www/`.
//!
//! Images cross the boundary as RGBA bytes ready for `ImageData`.

use srh_core::harness::png::colormap;
use srh_core::harness::{synth_rds, StereoSample, SynthSpec};
use srh_core::head::soft_argmin_batch;
use srh_core::{no_grad, Result, Tensor, Var};
use wasm_bindgen::prelude::*;

fn rgba_from_planes(img: &Tensor<f32>) -> Vec<u8> {
    let (h, w) = (img.dim(2), img.dim(3));
    let plane = h * w;
    let d = img.data();
    let mut out = Vec::with_capacity(4 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

/// A random-dot stereo pair with its ground truth.
#[wasm_bindgen]
pub struct RdsScene {
    sample: StereoSample,
    d_max: usize,
}

#[wasm_bindgen]
impl RdsScene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, width: usize, height: usize, d_max: usize, layers: usize, patches: usize) -> std::result::Result<RdsScene, JsError> {
        Self::generate(seed, width, height, d_max, layers, patches).map_err(js)
    }

    pub fn width(&self) -> usize {
        self.sample.width()
    }

    pub fn height(&self) -> usize {
        self.sample.height()
    }

    pub fn left_rgba(&self) -> Vec<u8> {
        rgba_from_planes(&self.sample.left)
    }

    pub fn right_rgba(&self) -> Vec<u8> {
        rgba_from_planes(&self.sample.right)
    }

    /// Ground truth through the colour ramp; occluded pixels are dimmed.
    pub fn disparity_rgba(&self) -> Vec<u8> {
        let occ = self.sample.occlusion.as_deref();
        let mut out = Vec::with_capacity(4 * self.sample.ground_truth.disparity.numel());
        for (i, &d) in self.sample.ground_truth.disparity.data().iter().enumerate() {
            let [r, g, b] = colormap(d as f64 / self.d_max as f64);
            let dim = |v: u8| if occ.is_some_and(|o| o[i]) { v / 3 } else { v };
            out.extend([dim(r), dim(g), dim(b), 255]);
        }
        out
    }

    /// Per-pixel colour difference between the left view and the right view
    /// moved by `shift` columns, as gray. Pixels whose true disparity equals
    /// `shift` are tinted green.
    pub fn residual_rgba(&self, shift: usize) -> Vec<u8> {
        let residual = self.residual(shift);
        let gt = self.sample.ground_truth.disparity.data();
        let mut out = Vec::with_capacity(4 * residual.len());
        for (i, r) in residual.iter().enumerate() {
            let v = (255.0 * (1.0 - r.min(1.0))).round() as u8;
            if gt[i] as usize == shift {
                out.extend([v / 3, v, v / 3, 255]);
            } else {
                out.extend([v, v, v, 255]);
            }
        }
        out
    }

    /// Mean residual over the pixels whose true disparity equals `shift`,
    /// or -1 when there are none.
    pub fn matched_residual(&self, shift: usize) -> f64 {
        let residual = self.residual(shift);
        let gt = self.sample.ground_truth.disparity.data();
        let occ = self.sample.occlusion.as_deref();
        let hits: Vec<f32> = residual
            .iter()
            .enumerate()
            .filter(|&(i, _)| gt[i] as usize == shift && !occ.is_some_and(|o| o[i]))
            .map(|(_, &r)| r)
            .collect();
        if hits.is_empty() {
            -1.0
        } else {
            hits.iter().map(|&r| r as f64).sum::<f64>() / hits.len() as f64
        }
    }
}

impl RdsScene {
    pub fn generate(seed: u32, width: usize, height: usize, d_max: usize, layers: usize, patches: usize) -> Result<Self> {
        let seed = seed as u64;
        let spec = SynthSpec::random(seed, height, width, d_max, layers, patches);
        Ok(RdsScene {
            sample: synth_rds(seed, &spec)?,
            d_max,
        })
    }

    /// Mean absolute RGB difference `|L(x) - R(x - shift)|`; columns with no
    /// partner read 1.
    fn residual(&self, shift: usize) -> Vec<f32> {
        let (h, w) = (self.height(), self.width());
        let (l, r) = (self.sample.left.data(), self.sample.right.data());
        let plane = h * w;
        (0..plane)
            .map(|i| {
                let x = i % w;
                if x < shift {
                    return 1.0;
                }
                (0..3).map(|c| (l[c * plane + i] - r[c * plane + i - shift]).abs()).sum::<f32>() / 3.0
            })
            .collect()
    }
}

/// Matching costs over `levels` disparities: a V-shaped valley at `centre`
/// with slope `sharpness`, plus an optional second valley of the given depth.
#[wasm_bindgen]
pub fn cost_curve(levels: usize, centre: f64, sharpness: f64, distractor: f64, distractor_depth: f64) -> Vec<f64> {
    (0..levels)
        .map(|k| {
            let k = k as f64;
            let main = sharpness * (k - centre).abs();
            let second = sharpness * (k - distractor).abs() + distractor_depth;
            main.min(second)
        })
        .collect()
}

/// Softmax of the negated costs, i.e. the weight the soft argmin gives each
/// disparity.
#[wasm_bindgen]
pub fn soft_argmin_weights(costs: &[f64]) -> Vec<f64> {
    let lo = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = costs.iter().map(|c| (lo - c).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Expected disparity under [`soft_argmin_weights`], computed by the
/// network's own regression head.
#[wasm_bindgen]
pub fn soft_argmin(costs: &[f64]) -> std::result::Result<f64, JsError> {
    expected_disparity(costs).map_err(js)
}

pub fn expected_disparity(costs: &[f64]) -> Result<f64> {
    let vol = Tensor::from_vec(&[1, costs.len(), 1, 1], costs.to_vec())?;
    let d = no_grad(|| soft_argmin_batch(&Var::constant(vol)))?;
    Ok(d.value().data()[0])
}

fn js(e: srh_core::Error) -> JsError {
    JsError::new(&e.to_string())
}
