//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then a config file, then
//! individual overrides (the command line), each replacing the previous.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::aggregate::{AggregatorConfig, AggregatorKind};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::head::LossWeights;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d_max: usize,
    /// 0 derives the level count from `d_max / downsample`.
    pub levels: usize,
    pub downsample: usize,
    pub feature_channels: usize,
    pub stem_channels: usize,
    pub trunk_channels: usize,
    pub hidden_channels: usize,
    pub hourglass_mid: usize,
    pub hourglass_bottleneck: usize,
    pub instance_norm: bool,
    pub aggregator: AggregatorKind,
    pub w1: f64,
    pub w2: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub crop_height: usize,
    pub crop_width: usize,
    pub epochs: usize,
    /// Optimizer steps; 0 means `epochs` passes over the dataset.
    pub steps: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Crops prepared ahead of the optimizer by a producer thread; 0 keeps
    /// everything on the training thread.
    pub prefetch: usize,
    pub log_every: usize,
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d_max: 192,
            levels: 0,
            downsample: 4,
            feature_channels: 32,
            stem_channels: 16,
            trunk_channels: 32,
            hidden_channels: 32,
            hourglass_mid: 48,
            hourglass_bottleneck: 64,
            instance_norm: false,
            aggregator: AggregatorKind::Srh,
            w1: 0.4,
            w2: 1.2,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            crop_height: 240,
            crop_width: 576,
            epochs: 10,
            steps: 0,
            seed: 0,
            precision: Precision::F32,
            prefetch: 0,
            log_every: 10,
            norm_mean: [0.5; 3],
            norm_std: [0.5; 3],
        }
    }
}

pub const KEYS: &[&str] = &[
    "d_max",
    "levels",
    "downsample",
    "feature_channels",
    "stem_channels",
    "trunk_channels",
    "hidden_channels",
    "hourglass_mid",
    "hourglass_bottleneck",
    "instance_norm",
    "aggregator",
    "w1",
    "w2",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "crop_height",
    "crop_width",
    "epochs",
    "steps",
    "seed",
    "precision",
    "prefetch",
    "log_every",
    "norm_mean",
    "norm_std",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse(key, p.trim()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [v] => Ok([v; 3]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Config(format!("{key}: expected 1 or 3 comma-separated numbers"))),
    }
}

fn triple(v: [f64; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "d_max" => self.d_max = parse(key, v)?,
            "levels" => self.levels = parse(key, v)?,
            "downsample" => self.downsample = parse(key, v)?,
            "feature_channels" => self.feature_channels = parse(key, v)?,
            "stem_channels" => self.stem_channels = parse(key, v)?,
            "trunk_channels" => self.trunk_channels = parse(key, v)?,
            "hidden_channels" => self.hidden_channels = parse(key, v)?,
            "hourglass_mid" => self.hourglass_mid = parse(key, v)?,
            "hourglass_bottleneck" => self.hourglass_bottleneck = parse(key, v)?,
            "instance_norm" => self.instance_norm = parse(key, v)?,
            "aggregator" => self.aggregator = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "w1" => self.w1 = parse(key, v)?,
            "w2" => self.w2 = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "crop_height" => self.crop_height = parse(key, v)?,
            "crop_width" => self.crop_width = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "precision" => self.precision = v.parse()?,
            "prefetch" => self.prefetch = parse(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "norm_mean" => self.norm_mean = parse_triple(key, v)?,
            "norm_std" => self.norm_std = parse_triple(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "d_max" => self.d_max.to_string(),
            "levels" => self.levels.to_string(),
            "downsample" => self.downsample.to_string(),
            "feature_channels" => self.feature_channels.to_string(),
            "stem_channels" => self.stem_channels.to_string(),
            "trunk_channels" => self.trunk_channels.to_string(),
            "hidden_channels" => self.hidden_channels.to_string(),
            "hourglass_mid" => self.hourglass_mid.to_string(),
            "hourglass_bottleneck" => self.hourglass_bottleneck.to_string(),
            "instance_norm" => self.instance_norm.to_string(),
            "aggregator" => self.aggregator.to_string(),
            "w1" => self.w1.to_string(),
            "w2" => self.w2.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "crop_height" => self.crop_height.to_string(),
            "crop_width" => self.crop_width.to_string(),
            "epochs" => self.epochs.to_string(),
            "steps" => self.steps.to_string(),
            "seed" => self.seed.to_string(),
            "precision" => self.precision.to_string(),
            "prefetch" => self.prefetch.to_string(),
            "log_every" => self.log_every.to_string(),
            "norm_mean" => triple(self.norm_mean),
            "norm_std" => triple(self.norm_std),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.apply_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Defaults, then `file` if given, then `overrides` in order.
    pub fn layered<'a>(
        file: Option<&Path>,
        overrides: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        for (k, v) in overrides {
            c.set(k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("every listed key is readable")))
            .collect()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { w1: self.w1, w2: self.w2 }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_max: self.d_max,
            levels: (self.levels > 0).then_some(self.levels),
            features: FeatureConfig {
                stem_channels: self.stem_channels,
                trunk_channels: self.trunk_channels,
                feature_channels: self.feature_channels,
                downsample: self.downsample,
                instance_norm: self.instance_norm,
            },
            aggregator: AggregatorConfig {
                kind: self.aggregator,
                hidden_channels: self.hidden_channels,
                hourglass_channels: [self.hourglass_mid, self.hourglass_bottleneck],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        self.model_config().range()?;
        let widths = [
            self.feature_channels,
            self.stem_channels,
            self.trunk_channels,
            self.hidden_channels,
            self.hourglass_mid,
            self.hourglass_bottleneck,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate must be >= 0 and betas in [0, 1)".into()));
        }
        if self.norm_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("norm_std entries must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.d_max, c.downsample, c.feature_channels), (192, 4, 32));
        assert_eq!((c.w1, c.w2, c.lr, c.beta1, c.beta2), (0.4, 1.2, 1e-3, 0.9, 0.999));
        assert_eq!(c.model_config().range().unwrap().levels, 48);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("aggregator", "stacked_gru").unwrap();
        c.set("norm_mean", "0.1,0.2,0.3").unwrap();
        let mut back = RunConfig::default();
        back.apply_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nd_max = 64\nseed=3\n").unwrap();
        let c = RunConfig::layered(Some(&path), [("seed", "9".to_string())]).unwrap();
        assert_eq!(c.d_max, 64);
        assert_eq!(c.seed, 9);
        assert_eq!(c.lr, 1e-3);
    }

    #[test]
    fn bad_input() {
        let mut c = RunConfig::default();
        assert!(c.apply_str("nonsense").is_err());
        assert!(c.apply_str("colour = red").is_err());
        assert!(c.set("d_max", "-1").is_err());
        c.w1 = 0.0;
        c.w2 = 0.0;
        assert!(c.validate().is_err());
    }
}
