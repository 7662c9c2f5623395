//! Recurrent aggregation of the cost sequence: convolutional GRUs, the
//! recurrent hourglass, and the two aggregators built from them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::Var;
use crate::cost::CostMap;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module, Param, Upsample2x};
use crate::ops;
use crate::tensor::{Real, Tensor};

/// Convolutional GRU with 3x3 kernels.
///
/// `z = sigmoid(Wz*[x;h])`, `r = sigmoid(Wr*[x;h])`,
/// `cand = tanh(Wh*[x; r.h])`, `h' = h + z.(cand - h)`.
#[derive(Clone)]
pub struct ConvGruCell<T: Real> {
    pub update: Conv2d<T>,
    pub reset: Conv2d<T>,
    pub candidate: Conv2d<T>,
    input_channels: usize,
    hidden_channels: usize,
}

/// Every intermediate of one GRU update.
pub struct GruStep<T: Real> {
    pub update_gate: Var<T>,
    pub reset_gate: Var<T>,
    pub candidate: Var<T>,
    pub hidden: Var<T>,
}

impl<T: Real> ConvGruCell<T> {
    pub fn new(name: &str, input_channels: usize, hidden_channels: usize, rng: &mut impl Rng) -> Self {
        let joint = input_channels + hidden_channels;
        ConvGruCell {
            update: Conv2d::new(&format!("{name}.update"), joint, hidden_channels, 3, 1, rng),
            reset: Conv2d::new(&format!("{name}.reset"), joint, hidden_channels, 3, 1, rng),
            candidate: Conv2d::new(&format!("{name}.candidate"), joint, hidden_channels, 3, 1, rng),
            input_channels,
            hidden_channels,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_channels
    }

    pub fn step_detailed(&self, x: &Var<T>, h: &Var<T>) -> Result<GruStep<T>> {
        let (xs, hs) = (x.shape(), h.shape());
        if xs.len() != 4
            || hs.len() != 4
            || xs[1] != self.input_channels
            || hs[1] != self.hidden_channels
            || xs[2..] != hs[2..]
        {
            return Err(Error::shape(
                "gru_step",
                format!(
                    "input {xs:?} and state {hs:?} for a {}->{} cell",
                    self.input_channels, self.hidden_channels
                ),
            ));
        }
        let xh = ops::concat(&[x, h], 1)?;
        let z = ops::sigmoid(&self.update.forward(&xh)?);
        let r = ops::sigmoid(&self.reset.forward(&xh)?);
        debug_assert!([&z, &r]
            .iter()
            .all(|g| g.value().data().iter().all(|v| (T::zero()..=T::one()).contains(v))));
        let gated = ops::mul(&r, h)?;
        let cand = ops::tanh(&self.candidate.forward(&ops::concat(&[x, &gated], 1)?)?);
        let hidden = ops::add(h, &ops::mul(&z, &ops::sub(&cand, h)?)?)?;
        Ok(GruStep {
            update_gate: z,
            reset_gate: r,
            candidate: cand,
            hidden,
        })
    }
}

pub fn gru_step<T: Real>(cell: &ConvGruCell<T>, x: &Var<T>, h: &Var<T>) -> Result<Var<T>> {
    Ok(cell.step_detailed(x, h)?.hidden)
}

impl<T: Real> Module<T> for ConvGruCell<T> {
    fn params(&self) -> Vec<&Param<T>> {
        [&self.update, &self.reset, &self.candidate]
            .into_iter()
            .flat_map(|c| c.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        [&mut self.update, &mut self.reset, &mut self.candidate]
            .into_iter()
            .flat_map(|c| c.params_mut())
            .collect()
    }
}

/// Encoder/decoder with a recurrent cell at 1/2 and 1/4 of the input scale.
#[derive(Clone)]
pub struct Hourglass<T: Real> {
    down1: Conv2d<T>,
    gru1: ConvGruCell<T>,
    down2: Conv2d<T>,
    gru2: ConvGruCell<T>,
    up1: Upsample2x<T>,
    up2: Upsample2x<T>,
}

pub struct HourglassOutput<T: Real> {
    /// Same shape as the input.
    pub output: Var<T>,
    /// Decoder features at 1/2 scale, fed forward to a following hourglass.
    pub mid: Var<T>,
    pub half_state: Var<T>,
    pub quarter_state: Var<T>,
}

impl<T: Real> Hourglass<T> {
    pub fn new(name: &str, channels: [usize; 3], rng: &mut impl Rng) -> Self {
        let [c, c2, c3] = channels;
        Hourglass {
            down1: Conv2d::new(&format!("{name}.down1"), c, c2, 3, 2, rng),
            gru1: ConvGruCell::new(&format!("{name}.gru1"), c2, c2, rng),
            down2: Conv2d::new(&format!("{name}.down2"), c2, c3, 3, 2, rng),
            gru2: ConvGruCell::new(&format!("{name}.gru2"), c3, c3, rng),
            up1: Upsample2x::new(&format!("{name}.up1"), c3, c2, rng),
            up2: Upsample2x::new(&format!("{name}.up2"), c2, c, rng),
        }
    }

    pub fn step(
        &self,
        x: &Var<T>,
        half_state: &Var<T>,
        quarter_state: &Var<T>,
        prior_mid: Option<&Var<T>>,
    ) -> Result<HourglassOutput<T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[2] % 4 != 0 || shape[3] % 4 != 0 {
            return Err(Error::Geometry(format!(
                "hourglass input must have spatial dims divisible by 4, got {shape:?}"
            )));
        }
        let mut e1 = self.down1.forward(x)?;
        if let Some(prior) = prior_mid {
            e1 = ops::add(&e1, prior)?;
        }
        let g1 = gru_step(&self.gru1, &ops::relu(&e1), half_state)?;
        let e2 = ops::relu(&self.down2.forward(&g1)?);
        let g2 = gru_step(&self.gru2, &e2, quarter_state)?;
        let mid = ops::relu(&ops::add(&self.up1.forward(&g2)?, &g1)?);
        let output = ops::add(&self.up2.forward(&mid)?, x)?;
        Ok(HourglassOutput {
            output,
            mid,
            half_state: g1,
            quarter_state: g2,
        })
    }
}

impl<T: Real> Module<T> for Hourglass<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.down1.params();
        out.extend(self.gru1.params());
        out.extend(self.down2.params());
        out.extend(self.gru2.params());
        out.extend(self.up1.params());
        out.extend(self.up2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.down1.params_mut();
        out.extend(self.gru1.params_mut());
        out.extend(self.down2.params_mut());
        out.extend(self.gru2.params_mut());
        out.extend(self.up1.params_mut());
        out.extend(self.up2.params_mut());
        out
    }
}

/// 3x3 conv, relu, 3x3 conv to a single channel.
#[derive(Clone)]
struct SliceHead<T: Real> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
}

impl<T: Real> SliceHead<T> {
    fn new(name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        SliceHead {
            conv1: Conv2d::new(&format!("{name}.conv1"), channels, channels, 3, 1, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), channels, 1, 3, 1, rng),
        }
    }

    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        self.conv2.forward(&ops::relu(&self.conv1.forward(x)?))
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.conv1.params();
        out.extend(self.conv2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.conv1.params_mut();
        out.extend(self.conv2.params_mut());
        out
    }
}

/// Hidden states carried from one disparity level to the next.
#[derive(Clone)]
pub struct GruStateSet<T: Real> {
    pub states: Vec<Var<T>>,
}

impl<T: Real> GruStateSet<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Copies of the current values, cut off from any graph.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.states.iter().map(|s| s.value().clone()).collect()
    }

    pub fn from_snapshot(values: Vec<Tensor<T>>) -> Self {
        GruStateSet {
            states: values.into_iter().map(Var::constant).collect(),
        }
    }

    pub fn nbytes(&self) -> usize {
        self.states.iter().map(|s| s.value().nbytes()).sum()
    }
}

/// The two single-channel cost slices produced for one disparity level,
/// `[1, 1, h, w]` each.
#[derive(Clone)]
pub struct AggregatedSlice<T: Real> {
    pub level: usize,
    pub intermediate: Var<T>,
    pub output: Var<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregatorKind {
    Srh,
    StackedGru,
}

impl AggregatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AggregatorKind::Srh => "srh",
            AggregatorKind::StackedGru => "stacked_gru",
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "srh" => Ok(AggregatorKind::Srh),
            "stacked_gru" => Ok(AggregatorKind::StackedGru),
            other => Err(Error::invalid(format!(
                "unknown aggregator {other:?}, expected srh or stacked_gru"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    /// Hidden width of the full-resolution GRUs and of each hourglass input.
    pub hidden_channels: usize,
    /// Hourglass widths at 1/2 and 1/4 scale.
    pub hourglass_channels: [usize; 2],
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            kind: AggregatorKind::Srh,
            hidden_channels: 32,
            hourglass_channels: [48, 64],
        }
    }
}

/// Two full-resolution GRUs followed by two stacked recurrent hourglasses,
/// each feeding a slice head.
#[derive(Clone)]
pub struct SrhAggregator<T: Real> {
    pre1: ConvGruCell<T>,
    pre2: ConvGruCell<T>,
    hg1: Hourglass<T>,
    hg2: Hourglass<T>,
    head1: SliceHead<T>,
    head2: SliceHead<T>,
}

impl<T: Real> SrhAggregator<T> {
    pub fn new(config: &AggregatorConfig, cost_channels: usize, rng: &mut impl Rng) -> Self {
        let c = config.hidden_channels;
        let [c2, c3] = config.hourglass_channels;
        SrhAggregator {
            pre1: ConvGruCell::new("srh.pre1", cost_channels, c, rng),
            pre2: ConvGruCell::new("srh.pre2", c, c, rng),
            hg1: Hourglass::new("srh.hg1", [c, c2, c3], rng),
            hg2: Hourglass::new("srh.hg2", [c, c2, c3], rng),
            head1: SliceHead::new("srh.head1", c, rng),
            head2: SliceHead::new("srh.head2", c, rng),
        }
    }

    /// Zero states: two at full feature scale, then half and quarter scale
    /// for each hourglass.
    pub fn reset_states(&self, h: usize, w: usize) -> Result<GruStateSet<T>> {
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::Geometry(format!(
                "hourglass aggregation needs a feature map divisible by 4, got {h}x{w}"
            )));
        }
        let c = self.pre1.hidden_channels();
        let c2 = self.hg1.gru1.hidden_channels();
        let c3 = self.hg1.gru2.hidden_channels();
        let zeros = |ch: usize, div: usize| Var::constant(Tensor::zeros(&[1, ch, h / div, w / div]));
        Ok(GruStateSet {
            states: vec![
                zeros(c, 1),
                zeros(c, 1),
                zeros(c2, 2),
                zeros(c3, 4),
                zeros(c2, 2),
                zeros(c3, 4),
            ],
        })
    }

    pub fn step(&self, cost: &CostMap<T>, states: &GruStateSet<T>) -> Result<(AggregatedSlice<T>, GruStateSet<T>)> {
        let s = &states.states;
        if s.len() != 6 {
            return Err(Error::invalid(format!("expected 6 recurrent states, got {}", s.len())));
        }
        let p1 = gru_step(&self.pre1, &cost.values, &s[0])?;
        let p2 = gru_step(&self.pre2, &p1, &s[1])?;
        let o1 = self.hg1.step(&p2, &s[2], &s[3], None)?;
        let o2 = self.hg2.step(&o1.output, &s[4], &s[5], Some(&o1.mid))?;
        let slice = AggregatedSlice {
            level: cost.level,
            intermediate: self.head1.forward(&o1.output)?,
            output: self.head2.forward(&o2.output)?,
        };
        let next = GruStateSet {
            states: vec![p1, p2, o1.half_state, o1.quarter_state, o2.half_state, o2.quarter_state],
        };
        Ok((slice, next))
    }
}

impl<T: Real> Module<T> for SrhAggregator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.pre1.params();
        out.extend(self.pre2.params());
        out.extend(self.hg1.params());
        out.extend(self.hg2.params());
        out.extend(self.head1.params());
        out.extend(self.head2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.pre1.params_mut();
        out.extend(self.pre2.params_mut());
        out.extend(self.hg1.params_mut());
        out.extend(self.hg2.params_mut());
        out.extend(self.head1.params_mut());
        out.extend(self.head2.params_mut());
        out
    }
}

/// Three GRUs at full feature scale and one slice head. Its single output
/// fills both slice fields.
#[derive(Clone)]
pub struct StackedGruAggregator<T: Real> {
    cells: [ConvGruCell<T>; 3],
    head: SliceHead<T>,
}

impl<T: Real> StackedGruAggregator<T> {
    pub fn new(config: &AggregatorConfig, cost_channels: usize, rng: &mut impl Rng) -> Self {
        let c = config.hidden_channels;
        StackedGruAggregator {
            cells: [
                ConvGruCell::new("stacked.gru1", cost_channels, c, rng),
                ConvGruCell::new("stacked.gru2", c, c, rng),
                ConvGruCell::new("stacked.gru3", c, c, rng),
            ],
            head: SliceHead::new("stacked.head", c, rng),
        }
    }

    pub fn cells(&self) -> &[ConvGruCell<T>; 3] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [ConvGruCell<T>; 3] {
        &mut self.cells
    }

    pub fn reset_states(&self, h: usize, w: usize) -> Result<GruStateSet<T>> {
        if h == 0 || w == 0 {
            return Err(Error::Geometry("empty feature map".into()));
        }
        Ok(GruStateSet {
            states: self
                .cells
                .iter()
                .map(|c| Var::constant(Tensor::zeros(&[1, c.hidden_channels(), h, w])))
                .collect(),
        })
    }

    pub fn step(&self, cost: &CostMap<T>, states: &GruStateSet<T>) -> Result<(AggregatedSlice<T>, GruStateSet<T>)> {
        if states.len() != 3 {
            return Err(Error::invalid(format!("expected 3 recurrent states, got {}", states.len())));
        }
        let mut x = cost.values.clone();
        let mut next = Vec::with_capacity(3);
        for (cell, h) in self.cells.iter().zip(&states.states) {
            x = gru_step(cell, &x, h)?;
            next.push(x.clone());
        }
        let out = self.head.forward(&x)?;
        Ok((
            AggregatedSlice {
                level: cost.level,
                intermediate: out.clone(),
                output: out,
            },
            GruStateSet { states: next },
        ))
    }
}

impl<T: Real> Module<T> for StackedGruAggregator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.cells.iter().flat_map(|c| c.params()).collect();
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.cells.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }
}

#[derive(Clone)]
pub enum Aggregator<T: Real> {
    Srh(SrhAggregator<T>),
    StackedGru(StackedGruAggregator<T>),
}

impl<T: Real> Aggregator<T> {
    pub fn new(config: &AggregatorConfig, cost_channels: usize, rng: &mut impl Rng) -> Self {
        match config.kind {
            AggregatorKind::Srh => Aggregator::Srh(SrhAggregator::new(config, cost_channels, rng)),
            AggregatorKind::StackedGru => {
                Aggregator::StackedGru(StackedGruAggregator::new(config, cost_channels, rng))
            }
        }
    }

    pub fn kind(&self) -> AggregatorKind {
        match self {
            Aggregator::Srh(_) => AggregatorKind::Srh,
            Aggregator::StackedGru(_) => AggregatorKind::StackedGru,
        }
    }

    pub fn reset_states(&self, h: usize, w: usize) -> Result<GruStateSet<T>> {
        match self {
            Aggregator::Srh(a) => a.reset_states(h, w),
            Aggregator::StackedGru(a) => a.reset_states(h, w),
        }
    }

    pub fn step(&self, cost: &CostMap<T>, states: &GruStateSet<T>) -> Result<(AggregatedSlice<T>, GruStateSet<T>)> {
        match self {
            Aggregator::Srh(a) => a.step(cost, states),
            Aggregator::StackedGru(a) => a.step(cost, states),
        }
    }
}

impl<T: Real> Module<T> for Aggregator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        match self {
            Aggregator::Srh(a) => a.params(),
            Aggregator::StackedGru(a) => a.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Aggregator::Srh(a) => a.params_mut(),
            Aggregator::StackedGru(a) => a.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> AggregatorConfig {
        AggregatorConfig {
            kind: AggregatorKind::Srh,
            hidden_channels: 4,
            hourglass_channels: [6, 8],
        }
    }

    #[test]
    fn parse_kind() {
        assert_eq!("srh".parse::<AggregatorKind>().unwrap(), AggregatorKind::Srh);
        assert_eq!("stacked_gru".parse::<AggregatorKind>().unwrap(), AggregatorKind::StackedGru);
        assert!("lstm".parse::<AggregatorKind>().is_err());
    }

    #[test]
    fn srh_state_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agg = SrhAggregator::<f64>::new(&small(), 6, &mut rng);
        let states = agg.reset_states(8, 12).unwrap();
        let shapes: Vec<_> = states.states.iter().map(|s| s.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![1, 4, 8, 12],
                vec![1, 4, 8, 12],
                vec![1, 6, 4, 6],
                vec![1, 8, 2, 3],
                vec![1, 6, 4, 6],
                vec![1, 8, 2, 3]
            ]
        );
        assert!(agg.reset_states(6, 12).is_err());
        let cost = CostMap {
            level: 0,
            values: Var::constant(Tensor::from_fn(&[1, 6, 8, 12], |i| (i as f64 * 0.1).sin())),
        };
        let (slice, next) = agg.step(&cost, &states).unwrap();
        assert_eq!(slice.output.shape(), &[1, 1, 8, 12]);
        assert_eq!(slice.intermediate.shape(), &[1, 1, 8, 12]);
        for (a, b) in next.states.iter().zip(&states.states) {
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn gru_rejects_mismatched_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = ConvGruCell::<f64>::new("g", 2, 3, &mut rng);
        let x = Var::constant(Tensor::zeros(&[1, 2, 4, 4]));
        assert!(gru_step(&cell, &x, &Var::constant(Tensor::zeros(&[1, 3, 4, 5]))).is_err());
        assert!(gru_step(&cell, &x, &Var::constant(Tensor::zeros(&[1, 2, 4, 4]))).is_err());
    }
}
