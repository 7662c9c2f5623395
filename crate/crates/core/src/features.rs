//! Siamese feature extraction: a strided residual CNN trunk followed by
//! spatial pyramid pooling, shared between the left and right images.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module, Param};
use crate::ops;
use crate::tensor::{Real, Tensor};

/// Grid divisions per side of the four pooling branches.
pub const SPP_GRIDS: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    /// Width of the first trunk stage.
    pub stem_channels: usize,
    /// Width of the later trunk stages (and of the SPP input).
    pub trunk_channels: usize,
    /// Output channels `Cf`.
    pub feature_channels: usize,
    /// Spatial downsample factor `s`: 1, 2, 4 or 8.
    pub downsample: usize,
    pub instance_norm: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            stem_channels: 16,
            trunk_channels: 32,
            feature_channels: 32,
            downsample: 4,
            instance_norm: false,
        }
    }
}

impl FeatureConfig {
    fn stage_count(&self) -> Result<usize> {
        match self.downsample {
            1 | 2 => Ok(1),
            4 => Ok(2),
            8 => Ok(3),
            s => Err(Error::invalid(format!("downsample factor {s} is not 1, 2, 4 or 8"))),
        }
    }
}

/// Subtracts per-channel means and divides by per-channel deviations.
pub fn normalize_image<T: Real>(raw: &Tensor<T>, means: [f64; 3], stds: [f64; 3]) -> Result<Tensor<T>> {
    if raw.rank() != 4 || raw.dim(1) != 3 {
        return Err(Error::shape("normalize_image", format!("expected [N, 3, H, W], got {:?}", raw.shape())));
    }
    if let Some(bad) = stds.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!("channel deviation {bad} must be positive")));
    }
    let plane = raw.dim(2) * raw.dim(3);
    let data = raw
        .data()
        .chunks(plane)
        .enumerate()
        .flat_map(|(i, chunk)| {
            let c = i % 3;
            let (m, s) = (T::from_f64(means[c]), T::from_f64(stds[c]));
            chunk.iter().map(move |&v| (v - m) / s)
        })
        .collect();
    Tensor::from_vec(raw.shape(), data)
}

/// Rectified left/right images of identical shape `[1, 3, H, W]`, already
/// normalised.
#[derive(Clone, Debug)]
pub struct ImagePair<T: Real> {
    pub left: Tensor<T>,
    pub right: Tensor<T>,
}

impl<T: Real> ImagePair<T> {
    pub fn new(left: Tensor<T>, right: Tensor<T>) -> Result<Self> {
        if left.shape() != right.shape() || left.rank() != 4 || left.dim(0) != 1 || left.dim(1) != 3 {
            return Err(Error::shape(
                "image pair",
                format!("left {:?} right {:?}, both must be [1, 3, H, W]", left.shape(), right.shape()),
            ));
        }
        Ok(ImagePair { left, right })
    }

    pub fn height(&self) -> usize {
        self.left.dim(2)
    }

    pub fn width(&self) -> usize {
        self.left.dim(3)
    }

    pub fn swapped(&self) -> Self {
        ImagePair {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureMap<T: Real> {
    pub values: Var<T>,
    pub downsample: usize,
}

impl<T: Real> FeatureMap<T> {
    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[3]
    }
}

#[derive(Clone)]
struct ResidualBlock<T: Real> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
}

impl<T: Real> ResidualBlock<T> {
    fn new(name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), channels, channels, 3, 1, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), channels, channels, 3, 1, rng),
        }
    }

    fn forward(&self, x: &Var<T>, norm: bool) -> Result<Var<T>> {
        let y = ops::relu(&maybe_norm(self.conv1.forward(x)?, norm)?);
        let y = maybe_norm(self.conv2.forward(&y)?, norm)?;
        Ok(ops::relu(&ops::add(&y, x)?))
    }
}

fn maybe_norm<T: Real>(x: Var<T>, norm: bool) -> Result<Var<T>> {
    if norm {
        ops::instance_norm2d(&x)
    } else {
        Ok(x)
    }
}

#[derive(Clone)]
struct Stage<T: Real> {
    entry: Conv2d<T>,
    blocks: [ResidualBlock<T>; 2],
}

/// Pooling pyramid over the trunk output, fused back to `Cf` channels.
#[derive(Clone)]
pub struct SpatialPyramid<T: Real> {
    branches: Vec<Conv2d<T>>,
    fuse: Conv2d<T>,
}

impl<T: Real> SpatialPyramid<T> {
    pub fn new(name: &str, channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let branch_width = (channels / SPP_GRIDS.len()).max(1);
        let branches = SPP_GRIDS
            .iter()
            .map(|g| Conv2d::new(&format!("{name}.branch{g}"), channels, branch_width, 1, 1, rng))
            .collect();
        let fused_in = channels + branch_width * SPP_GRIDS.len();
        SpatialPyramid {
            branches,
            fuse: Conv2d::new(&format!("{name}.fuse"), fused_in, out_channels, 3, 1, rng),
        }
    }

    /// Pools `base` over 1x1, 2x2, 4x4 and 8x8 grids, projects each branch
    /// with a linear 1x1 conv, resizes back, concatenates with `base` and fuses.
    ///
    /// Grids finer than the map degenerate to one-pixel windows, so maps
    /// down to 4x4 are accepted.
    pub fn forward(&self, base: &Var<T>) -> Result<Var<T>> {
        let s = base.shape();
        if s.len() != 4 || s[2] < 4 || s[3] < 4 {
            return Err(Error::Geometry(format!(
                "pyramid pooling needs at least a 4x4 map, got {s:?}"
            )));
        }
        let (h, w) = (s[2], s[3]);
        let mut parts = vec![base.clone()];
        for (grid, conv) in SPP_GRIDS.iter().zip(&self.branches) {
            let window = ((h / grid).max(1), (w / grid).max(1));
            let pooled = ops::avg_pool2d(base, window, window)?;
            // No activation here: pooled trunk outputs are nonnegative and,
            // for the coarse grids, nearly input-independent, so a relu can
            // stay closed for every input and cut the branch off.
            let projected = conv.forward(&pooled)?;
            parts.push(ops::bilinear_resize2d(&projected, h, w, false)?);
        }
        let refs: Vec<&Var<T>> = parts.iter().collect();
        self.fuse.forward(&ops::concat(&refs, 1)?)
    }
}

impl<T: Real> Module<T> for SpatialPyramid<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.branches
            .iter()
            .flat_map(|b| b.params())
            .chain(self.fuse.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.branches.iter_mut().flat_map(|b| b.params_mut()).collect();
        out.extend(self.fuse.params_mut());
        out
    }
}

#[derive(Clone)]
pub struct FeatureExtractor<T: Real> {
    config: FeatureConfig,
    stages: Vec<Stage<T>>,
    pyramid: SpatialPyramid<T>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new(config: FeatureConfig, rng: &mut impl Rng) -> Result<Self> {
        let stages = config.stage_count()?;
        let stride = if config.downsample == 1 { 1 } else { 2 };
        let mut in_ch = 3;
        let stages = (0..stages)
            .map(|i| {
                let width = if i == 0 { config.stem_channels } else { config.trunk_channels };
                let name = format!("features.stage{i}");
                let stage = Stage {
                    entry: Conv2d::new(&format!("{name}.entry"), in_ch, width, 3, stride, rng),
                    blocks: [
                        ResidualBlock::new(&format!("{name}.block0"), width, rng),
                        ResidualBlock::new(&format!("{name}.block1"), width, rng),
                    ],
                };
                in_ch = width;
                stage
            })
            .collect();
        let pyramid = SpatialPyramid::new("features.spp", in_ch, config.feature_channels, rng);
        Ok(FeatureExtractor { config, stages, pyramid })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Trunk output before pyramid pooling, at `1/s` resolution.
    pub fn extract_base(&self, image: &Var<T>) -> Result<Var<T>> {
        let norm = self.config.instance_norm;
        let mut x = image.clone();
        for stage in &self.stages {
            x = ops::relu(&maybe_norm(stage.entry.forward(&x)?, norm)?);
            for block in &stage.blocks {
                x = block.forward(&x, norm)?;
            }
        }
        Ok(x)
    }

    pub fn forward(&self, image: &Var<T>) -> Result<Var<T>> {
        let s = image.shape();
        let ds = self.config.downsample;
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("extract_features", format!("expected [N, 3, H, W], got {s:?}")));
        }
        if s[2] % ds != 0 || s[3] % ds != 0 {
            let pad_h = (ds - s[2] % ds) % ds;
            let pad_w = (ds - s[3] % ds) % ds;
            return Err(Error::Geometry(format!(
                "image {}x{} is not divisible by {ds}; pad by {pad_h} rows and {pad_w} columns",
                s[2], s[3]
            )));
        }
        let base = self.extract_base(image)?;
        self.pyramid.forward(&base)
    }

    /// Runs both images through the same weights.
    pub fn extract_features(&self, pair: &ImagePair<T>) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
        let left = self.forward(&Var::constant(pair.left.clone()))?;
        let right = self.forward(&Var::constant(pair.right.clone()))?;
        let ds = self.config.downsample;
        Ok((
            FeatureMap { values: left, downsample: ds },
            FeatureMap { values: right, downsample: ds },
        ))
    }
}

impl<T: Real> Module<T> for FeatureExtractor<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for stage in &self.stages {
            out.extend(stage.entry.params());
            for b in &stage.blocks {
                out.extend(b.conv1.params());
                out.extend(b.conv2.params());
            }
        }
        out.extend(self.pyramid.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            out.extend(stage.entry.params_mut());
            for b in &mut stage.blocks {
                out.extend(b.conv1.params_mut());
                out.extend(b.conv2.params_mut());
            }
        }
        out.extend(self.pyramid.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn extractor(cf: usize) -> FeatureExtractor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = FeatureConfig {
            stem_channels: 4,
            trunk_channels: 8,
            feature_channels: cf,
            ..FeatureConfig::default()
        };
        FeatureExtractor::new(config, &mut rng).unwrap()
    }

    #[test]
    fn normalisation_arithmetic() {
        let half = Tensor::<f64>::full(&[1, 3, 2, 2], 0.5);
        let out = normalize_image(&half, [0.5; 3], [0.25; 3]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let three_q = Tensor::<f64>::full(&[1, 3, 2, 2], 0.75);
        let out = normalize_image(&three_q, [0.5; 3], [0.25; 3]).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
        let raw = Tensor::<f64>::from_fn(&[1, 3, 2, 2], |i| i as f64 * 0.1);
        assert_eq!(normalize_image(&raw, [0.0; 3], [1.0; 3]).unwrap(), raw);
        assert!(normalize_image(&raw, [0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn per_channel_constants() {
        let raw = Tensor::<f64>::from_fn(&[1, 3, 1, 2], |i| [0.2, 0.2, 0.4, 0.4, 0.6, 0.6][i]);
        let out = normalize_image(&raw, [0.2, 0.4, 0.6], [1.0, 2.0, 4.0]).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn feature_shape_and_divisibility() {
        let ex = extractor(6);
        let pair = ImagePair::new(Tensor::zeros(&[1, 3, 32, 48]), Tensor::zeros(&[1, 3, 32, 48])).unwrap();
        let (l, r) = ex.extract_features(&pair).unwrap();
        assert_eq!(l.values.shape(), &[1, 6, 8, 12]);
        assert_eq!(r.values.shape(), &[1, 6, 8, 12]);
        let bad = Var::constant(Tensor::<f32>::zeros(&[1, 3, 30, 48]));
        let err = ex.forward(&bad).unwrap_err().to_string();
        assert!(err.contains("pad by 2 rows"), "{err}");
    }

    #[test]
    fn pair_shapes_must_match() {
        assert!(ImagePair::new(Tensor::<f32>::zeros(&[1, 3, 8, 8]), Tensor::zeros(&[1, 3, 8, 4])).is_err());
    }

    #[test]
    fn pyramid_rejects_tiny_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spp = SpatialPyramid::<f64>::new("spp", 4, 4, &mut rng);
        assert!(spp.forward(&Var::constant(Tensor::zeros(&[1, 4, 3, 8]))).is_err());
        assert!(spp.forward(&Var::constant(Tensor::zeros(&[1, 4, 4, 8]))).is_ok());
    }
}
