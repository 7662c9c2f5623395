//! Random-dot stereograms with layered fronto-parallel surfaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::dataset::StereoSample;
use crate::head::GroundTruth;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerShape {
    Rect,
    Ellipse,
}

/// A surface at constant integer disparity, placed in left-image
/// coordinates by its bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub shape: LayerShape,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub disparity: usize,
}

impl Layer {
    fn contains(&self, px: usize, py: usize) -> bool {
        if px < self.x || py < self.y || px >= self.x + self.width || py >= self.y + self.height {
            return false;
        }
        match self.shape {
            LayerShape::Rect => true,
            LayerShape::Ellipse => {
                let (rx, ry) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
                let dx = (px as f64 + 0.5 - self.x as f64 - rx) / rx;
                let dy = (py as f64 + 0.5 - self.y as f64 - ry) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

/// Axis-aligned window of flat colour in the left texture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    /// Every disparity must be below this bound.
    pub d_max: usize,
    pub background_disparity: usize,
    /// Painted in order of increasing disparity, so nearer layers cover
    /// farther ones.
    pub layers: Vec<Layer>,
    /// Probability that a texture cell carries a dot.
    pub dot_density: f64,
    /// Side of a square texture cell in pixels.
    pub dot_size: usize,
    pub textureless: Vec<Patch>,
}

impl SynthSpec {
    pub fn flat(height: usize, width: usize, d_max: usize, disparity: usize) -> Self {
        SynthSpec {
            height,
            width,
            d_max,
            background_disparity: disparity,
            layers: Vec::new(),
            dot_density: 0.5,
            dot_size: 1,
            textureless: Vec::new(),
        }
    }

    /// A scene of `layers` random rectangles and ellipses over a background at
    /// disparity of at least 1, plus `patches` flat-colour windows.
    pub fn random(seed: u64, height: usize, width: usize, d_max: usize, layers: usize, patches: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f5c_e4e5);
        let bg = rng.gen_range(1..=(d_max / 4).max(1)).min(d_max.saturating_sub(1)).max(1);
        let span = |rng: &mut ChaCha8Rng, full: usize, lo: f64, hi: f64| {
            let a = ((full as f64 * lo) as usize).max(1);
            let b = ((full as f64 * hi) as usize).max(a + 1);
            let len = rng.gen_range(a..b).min(full);
            (rng.gen_range(0..=full - len), len)
        };
        let layers = (0..layers)
            .map(|_| {
                let (x, width_) = span(&mut rng, width, 0.2, 0.55);
                let (y, height_) = span(&mut rng, height, 0.2, 0.55);
                let shape = if rng.gen_bool(0.5) { LayerShape::Rect } else { LayerShape::Ellipse };
                let disparity = if bg + 1 < d_max { rng.gen_range(bg + 1..d_max) } else { bg };
                Layer {
                    shape,
                    x,
                    y,
                    width: width_,
                    height: height_,
                    disparity,
                }
            })
            .collect();
        let textureless = (0..patches)
            .map(|_| {
                let (x, w) = span(&mut rng, width, 0.1, 0.25);
                let (y, h) = span(&mut rng, height, 0.1, 0.25);
                Patch { x, y, width: w, height: h }
            })
            .collect();
        SynthSpec {
            height,
            width,
            d_max,
            background_disparity: bg,
            layers,
            dot_density: 0.5,
            dot_size: 1,
            textureless,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.dot_size == 0 {
            return Err(Error::invalid("synthetic scene needs positive dimensions and dot size"));
        }
        if !(0.0..=1.0).contains(&self.dot_density) {
            return Err(Error::invalid(format!("dot density {} outside [0, 1]", self.dot_density)));
        }
        let worst = self
            .layers
            .iter()
            .map(|l| l.disparity)
            .chain([self.background_disparity])
            .max()
            .unwrap_or(0);
        if worst >= self.d_max {
            return Err(Error::invalid(format!(
                "disparity {worst} is not below the maximum {}",
                self.d_max
            )));
        }
        Ok(())
    }

    /// Left-view integer disparity, row-major.
    pub fn disparity_map(&self) -> Vec<usize> {
        let mut order: Vec<&Layer> = self.layers.iter().collect();
        order.sort_by_key(|l| l.disparity);
        let mut disp = vec![self.background_disparity; self.height * self.width];
        for l in order {
            for y in 0..self.height {
                for x in 0..self.width {
                    if l.contains(x, y) {
                        disp[y * self.width + x] = l.disparity;
                    }
                }
            }
        }
        disp
    }
}

fn dot_texture(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64, cell: usize) -> Vec<[f32; 3]> {
    let (ch, cw) = (h.div_ceil(cell), w.div_ceil(cell));
    let cells: Vec<[f32; 3]> = (0..ch * cw)
        .map(|_| {
            if rng.gen_bool(density) {
                [rng.gen(), rng.gen(), rng.gen()]
            } else {
                [0.0; 3]
            }
        })
        .collect();
    (0..h * w)
        .map(|i| cells[(i / w / cell) * cw + (i % w) / cell])
        .collect()
}

fn planar(pixels: &[[f32; 3]], h: usize, w: usize) -> Result<Tensor<f32>> {
    let data = (0..3).flat_map(|c| pixels.iter().map(move |p| p[c])).collect();
    Tensor::from_vec(&[1, 3, h, w], data)
}

/// Renders the scene: a dot texture in the left view, forward-warped by the
/// ground truth into the right view with nearer surfaces winning. Right
/// pixels no surface lands on get fresh dots; left pixels that land outside
/// the right image or behind a nearer surface are marked occluded.
pub fn synth_rds(seed: u64, spec: &SynthSpec) -> Result<StereoSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut left = dot_texture(&mut rng, h, w, spec.dot_density, spec.dot_size);
    for p in &spec.textureless {
        let colour = [rng.gen(), rng.gen(), rng.gen()];
        for y in p.y..(p.y + p.height).min(h) {
            for x in p.x..(p.x + p.width).min(w) {
                left[y * w + x] = colour;
            }
        }
    }
    let mut right = dot_texture(&mut rng, h, w, spec.dot_density, spec.dot_size);
    let disp = spec.disparity_map();

    let mut depth: Vec<Option<usize>> = vec![None; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = disp[y * w + x];
            if let Some(xr) = x.checked_sub(d) {
                let slot = &mut depth[y * w + xr];
                if slot.map_or(true, |cur| d > cur) {
                    *slot = Some(d);
                    right[y * w + xr] = left[y * w + x];
                }
            }
        }
    }
    let occlusion: Vec<bool> = (0..h * w)
        .map(|i| {
            let (y, x, d) = (i / w, i % w, disp[i]);
            match x.checked_sub(d) {
                None => true,
                Some(xr) => depth[y * w + xr] != Some(d),
            }
        })
        .collect();

    let gt = Tensor::from_vec(&[1, 1, h, w], disp.iter().map(|&d| d as f32).collect())?;
    StereoSample::new(
        planar(&left, h, w)?,
        planar(&right, h, w)?,
        GroundTruth::new(gt, spec.d_max)?,
        Some(occlusion),
        format!("synth seed={seed}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_large_disparity_rejected() {
        let spec = SynthSpec::flat(8, 8, 4, 4);
        assert!(synth_rds(0, &spec).is_err());
    }

    #[test]
    fn random_scenes_respect_bounds() {
        for seed in 0..20 {
            let spec = SynthSpec::random(seed, 32, 48, 16, 3, 2);
            let s = synth_rds(seed, &spec).unwrap();
            assert!(s.ground_truth.disparity.data().iter().all(|&d| (1.0..16.0).contains(&d)));
            assert_eq!(s.ground_truth.valid_count(), 32 * 48);
        }
    }

    #[test]
    fn flat_scene_occludes_left_border_only() {
        let s = synth_rds(5, &SynthSpec::flat(4, 10, 8, 3)).unwrap();
        let occ = s.occlusion.unwrap();
        for y in 0..4 {
            for x in 0..10 {
                assert_eq!(occ[y * 10 + x], x < 3);
            }
        }
    }
}
