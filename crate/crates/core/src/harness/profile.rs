//! Peak activation memory and time per frame across a sweep of input
//! heights or disparity ranges.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::no_grad;
use crate::checkpoint::Checkpoint;
use crate::cost::build_cost_map;
use crate::error::{Error, Result};
use crate::features::ImagePair;
use crate::model::StereoNet;
use crate::tensor::{memory, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Input height, with the width held fixed.
    Height,
    DMax,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Height => "height",
            SweepAxis::DMax => "d_max",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub points: Vec<usize>,
    /// Input size and disparity range for the axis that is not swept.
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
}

impl Sweep {
    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("profile sweep has no points"));
        }
        if self.points.windows(2).any(|p| p[0] >= p[1]) || self.points[0] == 0 {
            return Err(Error::invalid(format!(
                "sweep points must be positive and strictly increasing, got {:?}",
                self.points
            )));
        }
        Ok(())
    }
}

/// Parses `d_max:64,128,192` or `height:64,128`.
impl FromStr for SweepAxisPoints {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (axis, list) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("sweep {s:?} is not axis:points")))?;
        let axis = match axis {
            "height" => SweepAxis::Height,
            "d_max" => SweepAxis::DMax,
            other => return Err(Error::invalid(format!("unknown sweep axis {other:?}"))),
        };
        let points = list
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse().map_err(|_| Error::invalid(format!("bad sweep point {p:?}"))))
            .collect::<Result<_>>()?;
        Ok(SweepAxisPoints { axis, points })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepAxisPoints {
    pub axis: SweepAxis,
    pub points: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfilePoint {
    pub value: usize,
    /// Peak tensor bytes allocated during inference on top of the inputs
    /// and weights.
    pub peak_bytes: u64,
    pub seconds: f64,
    /// Bytes allocated to build one cost map.
    pub cost_map_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileReport {
    pub axis: SweepAxis,
    pub streaming: bool,
    pub points: Vec<ProfilePoint>,
}

impl ProfileReport {
    pub fn to_key_value_lines(&self) -> String {
        let mut out = format!("axis={}\nstreaming={}\n", self.axis, self.streaming);
        for p in &self.points {
            let v = p.value;
            out.push_str(&format!(
                "{}.{v}.peak_bytes={}\n{}.{v}.seconds={:.6}\n{}.{v}.cost_map_bytes={}\n",
                self.axis, p.peak_bytes, self.axis, p.seconds, self.axis, p.cost_map_bytes
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{}\tstreaming\tpeak_bytes\tseconds\tcost_map_bytes\n", self.axis);
        for p in &self.points {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\n",
                p.value, self.streaming, p.peak_bytes, p.seconds, p.cost_map_bytes
            ));
        }
        out
    }
}

fn noise_pair<T: Real>(h: usize, w: usize, seed: u64) -> Result<ImagePair<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = || Tensor::from_fn(&[1, 3, h, w], |_| T::from_f64(rng.gen_range(-1.0..1.0)));
    let left = img();
    ImagePair::new(left, img())
}

/// Runs inference at every sweep point with the weights in `checkpoint`.
pub fn profile<T: Real>(checkpoint: &Checkpoint, sweep: &Sweep, streaming: bool) -> Result<ProfileReport> {
    sweep.validate()?;
    let base = StereoNet::<T>::from_checkpoint(checkpoint)?;
    let mut points = Vec::with_capacity(sweep.points.len());
    for &value in &sweep.points {
        let (h, d_max) = match sweep.axis {
            SweepAxis::Height => (value, sweep.d_max),
            SweepAxis::DMax => (sweep.height, value),
        };
        let mut config = base.config().clone();
        config.d_max = d_max;
        let mut model = StereoNet::<T>::new(config, 0)?;
        model.load_weights(checkpoint)?;
        let pair = noise_pair::<T>(h, sweep.width, 7)?;

        let start = Instant::now();
        let (result, peak_bytes) = memory::measure_peak(|| model.infer(&pair, streaming));
        result?;
        let seconds = start.elapsed().as_secs_f64();

        let cost_map_bytes = no_grad(|| -> Result<u64> {
            let (l, r) = model.extractor.extract_features(&pair)?;
            let (map, bytes) = memory::measure_peak(|| build_cost_map(&l, &r, 0));
            map?;
            Ok(bytes)
        })?;
        points.push(ProfilePoint {
            value,
            peak_bytes,
            seconds,
            cost_map_bytes,
        });
    }
    Ok(ProfileReport {
        axis: sweep.axis,
        streaming,
        points,
    })
}
