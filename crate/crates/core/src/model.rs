//! The full network: shared feature extractor, cost sequence, recurrent
//! aggregator and soft-argmin head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{AggregatedSlice, Aggregator, AggregatorConfig, AggregatorKind};
use crate::autodiff::{no_grad, Var};
use crate::checkpoint::Checkpoint;
use crate::cost::{cost_sequence, DisparityRange};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor, FeatureMap, ImagePair};
use crate::head::{soft_argmin_batch, upsample_cost, DisparityMap, StreamingSoftArgmin};
use crate::nn::{Module, Param};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_max: usize,
    /// Overrides `ceil(d_max / s)` as the number of aggregated levels.
    pub levels: Option<usize>,
    pub features: FeatureConfig,
    pub aggregator: AggregatorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_max: 192,
            levels: None,
            features: FeatureConfig::default(),
            aggregator: AggregatorConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Narrow widths for quick experiments on a CPU.
    pub fn compact(d_max: usize, kind: AggregatorKind) -> Self {
        ModelConfig {
            d_max,
            levels: None,
            features: FeatureConfig {
                stem_channels: 8,
                trunk_channels: 16,
                feature_channels: 16,
                downsample: 4,
                instance_norm: false,
            },
            aggregator: AggregatorConfig {
                kind,
                hidden_channels: 16,
                hourglass_channels: [24, 32],
            },
        }
    }

    pub fn range(&self) -> Result<DisparityRange> {
        let s = self.features.downsample;
        match self.levels {
            Some(l) => DisparityRange::with_levels(self.d_max, s, l),
            None => DisparityRange::new(self.d_max, s),
        }
    }

    /// Architecture encoded as numbers, stored next to the weights.
    fn encode(&self) -> Tensor<f32> {
        let f = &self.features;
        let a = &self.aggregator;
        let kind = match a.kind {
            AggregatorKind::Srh => 0,
            AggregatorKind::StackedGru => 1,
        };
        let v = [
            self.d_max,
            self.levels.unwrap_or(0),
            f.stem_channels,
            f.trunk_channels,
            f.feature_channels,
            f.downsample,
            f.instance_norm as usize,
            kind,
            a.hidden_channels,
            a.hourglass_channels[0],
            a.hourglass_channels[1],
        ];
        Tensor::from_fn(&[v.len()], |i| v[i] as f32)
    }

    fn decode(t: &Tensor<f32>) -> Result<Self> {
        let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
        if v.len() != 11 {
            return Err(Error::format("checkpoint", "architecture record has the wrong length"));
        }
        let kind = match v[7] {
            0 => AggregatorKind::Srh,
            1 => AggregatorKind::StackedGru,
            k => return Err(Error::format("checkpoint", format!("unknown aggregator code {k}"))),
        };
        Ok(ModelConfig {
            d_max: v[0],
            levels: (v[1] > 0).then_some(v[1]),
            features: FeatureConfig {
                stem_channels: v[2],
                trunk_channels: v[3],
                feature_channels: v[4],
                downsample: v[5],
                instance_norm: v[6] != 0,
            },
            aggregator: AggregatorConfig {
                kind,
                hidden_channels: v[8],
                hourglass_channels: [v[9], v[10]],
            },
        })
    }
}

const ARCH_ENTRY: &str = "meta.arch";

/// Both disparity estimates of a forward pass, `[1, 1, H, W]` each.
pub struct Prediction<T: Real> {
    pub intermediate: Var<T>,
    pub output: Var<T>,
}

#[derive(Clone)]
pub struct StereoNet<T: Real> {
    config: ModelConfig,
    pub extractor: FeatureExtractor<T>,
    pub aggregator: Aggregator<T>,
}

impl<T: Real> StereoNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.range()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extractor = FeatureExtractor::new(config.features.clone(), &mut rng)?;
        let aggregator = Aggregator::new(&config.aggregator, 2 * config.features.feature_channels, &mut rng);
        Ok(StereoNet {
            config,
            extractor,
            aggregator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_pair(&self, pair: &ImagePair<T>) -> Result<DisparityRange> {
        let range = self.config.range()?;
        let s = self.config.features.downsample;
        let (h, w) = (pair.height(), pair.width());
        if let Aggregator::Srh(_) = self.aggregator {
            let unit = 4 * s;
            if h % unit != 0 || w % unit != 0 {
                return Err(Error::Geometry(format!(
                    "image {h}x{w} must be divisible by {unit}; pad by {} rows and {} columns",
                    (unit - h % unit) % unit,
                    (unit - w % unit) % unit
                )));
            }
        }
        Ok(range)
    }

    /// Runs extraction and aggregation, handing each slice to `sink` as soon
    /// as it is produced.
    fn run_levels(
        &self,
        pair: &ImagePair<T>,
        mut sink: impl FnMut(AggregatedSlice<T>) -> Result<()>,
    ) -> Result<(DisparityRange, FeatureMap<T>)> {
        let range = self.check_pair(pair)?;
        let (left, right) = self.extractor.extract_features(pair)?;
        let mut states = self.aggregator.reset_states(left.height(), left.width())?;
        for cost in cost_sequence(&left, &right, &range)? {
            let (slice, next) = self.aggregator.step(&cost?, &states)?;
            states = next;
            sink(slice)?;
        }
        Ok((range, left))
    }

    /// Differentiable forward pass holding the whole upsampled volume.
    pub fn forward(&self, pair: &ImagePair<T>) -> Result<Prediction<T>> {
        let mut mids = Vec::new();
        let mut outs = Vec::new();
        let (range, _) = self.run_levels(pair, |s| {
            mids.push(s.intermediate);
            outs.push(s.output);
            Ok(())
        })?;
        let (h, w) = (pair.height(), pair.width());
        let out_vol = upsample_cost(&outs, h, w, range.d_max)?;
        let output = soft_argmin_batch(&out_vol)?;
        let intermediate = if let Aggregator::StackedGru(_) = self.aggregator {
            output.clone()
        } else {
            soft_argmin_batch(&upsample_cost(&mids, h, w, range.d_max)?)?
        };
        Ok(Prediction { intermediate, output })
    }

    /// Final-output disparity without recording a graph.
    ///
    /// With `streaming` each slice is folded into a running soft argmin and
    /// dropped; otherwise the full upsampled volume is built first.
    pub fn infer(&self, pair: &ImagePair<T>, streaming: bool) -> Result<DisparityMap<T>> {
        no_grad(|| {
            if !streaming {
                let mut outs = Vec::new();
                let (range, _) = self.run_levels(pair, |s| {
                    outs.push(s.output);
                    Ok(())
                })?;
                let vol = upsample_cost(&outs, pair.height(), pair.width(), range.d_max)?;
                return Ok(DisparityMap {
                    values: soft_argmin_batch(&vol)?.value().clone(),
                });
            }
            let range = self.check_pair(pair)?;
            let s = self.config.features.downsample;
            let (fh, fw) = (pair.height() / s, pair.width() / s);
            let mut acc = StreamingSoftArgmin::new(range.levels, fh, fw, pair.height(), pair.width(), range.d_max)?;
            self.run_levels(pair, |slice| acc.push(slice.level, slice.output.value()))?;
            acc.finish()
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push(ARCH_ENTRY, self.config.encode());
        for p in self.params() {
            ck.push(p.name(), p.value().cast());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch = ck
            .get(ARCH_ENTRY)
            .ok_or_else(|| Error::format("checkpoint", format!("missing {ARCH_ENTRY}")))?;
        let mut net = Self::new(ModelConfig::decode(arch)?, 0)?;
        net.load_weights(ck)?;
        Ok(net)
    }

    /// Copies every parameter from `ck`, which must match names and shapes.
    pub fn load_weights(&mut self, ck: &Checkpoint) -> Result<()> {
        for p in self.params_mut() {
            let t = ck
                .get(p.name())
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter {}", p.name())))?;
            if t.shape() != p.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("{}: stored {:?}, model expects {:?}", p.name(), t.shape(), p.shape()),
                ));
            }
            p.set_value(t.cast());
        }
        Ok(())
    }
}

impl<T: Real> Module<T> for StereoNet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.extractor.params();
        out.extend(self.aggregator.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.extractor.params_mut();
        out.extend(self.aggregator.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(h: usize, w: usize) -> ImagePair<f32> {
        let l = Tensor::from_fn(&[1, 3, h, w], |i| ((i * 7919) % 97) as f32 / 97.0 - 0.5);
        let r = Tensor::from_fn(&[1, 3, h, w], |i| ((i * 104_729) % 89) as f32 / 89.0 - 0.5);
        ImagePair::new(l, r).unwrap()
    }

    fn tiny(kind: AggregatorKind) -> ModelConfig {
        let mut c = ModelConfig::compact(16, kind);
        c.features = FeatureConfig {
            stem_channels: 4,
            trunk_channels: 4,
            feature_channels: 4,
            ..c.features
        };
        c.aggregator.hidden_channels = 4;
        c.aggregator.hourglass_channels = [4, 4];
        c
    }

    #[test]
    fn shapes_and_range() {
        for kind in [AggregatorKind::Srh, AggregatorKind::StackedGru] {
            let net = StereoNet::<f32>::new(tiny(kind), 3).unwrap();
            let p = pair(16, 32);
            let pred = net.forward(&p).unwrap();
            assert_eq!(pred.output.shape(), &[1, 1, 16, 32]);
            assert!(pred.output.value().data().iter().all(|&d| (0.0..=15.0).contains(&d)));
        }
    }

    #[test]
    fn srh_rejects_indivisible_images() {
        let net = StereoNet::<f32>::new(tiny(AggregatorKind::Srh), 3).unwrap();
        let err = net.infer(&pair(24, 32), true).unwrap_err().to_string();
        assert!(err.contains("divisible by 16"), "{err}");
    }

    #[test]
    fn checkpoint_restores_everything() {
        let net = StereoNet::<f32>::new(tiny(AggregatorKind::Srh), 11).unwrap();
        let ck = net.to_checkpoint();
        let back = StereoNet::<f32>::from_checkpoint(&ck).unwrap();
        assert_eq!(back.config(), net.config());
        let p = pair(16, 16);
        assert_eq!(net.infer(&p, true).unwrap(), back.infer(&p, true).unwrap());
    }
}
