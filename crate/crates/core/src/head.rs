//! Turning aggregated cost slices into disparity: upsampling, soft argmin
//! (batch and streaming) and the smooth-L1 training loss.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::ops::{self, linear_taps, resize_plane, LinearTap};
use crate::tensor::{Real, Tensor};

/// Dense disparity `[1, 1, H, W]` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap<T: Real> {
    pub values: Tensor<T>,
}

impl<T: Real> DisparityMap<T> {
    pub fn height(&self) -> usize {
        self.values.dim(2)
    }

    pub fn width(&self) -> usize {
        self.values.dim(3)
    }
}

/// Ground-truth disparity with its validity mask.
#[derive(Clone, Debug)]
pub struct GroundTruth<T: Real> {
    pub disparity: Tensor<T>,
    pub valid: Vec<bool>,
}

impl<T: Real> GroundTruth<T> {
    /// Pixels with `0 < d < d_max` are valid.
    pub fn new(disparity: Tensor<T>, d_max: usize) -> Result<Self> {
        let hi = T::from_usize(d_max);
        let valid = disparity
            .data()
            .iter()
            .map(|&d| d.is_finite() && d > T::zero() && d < hi)
            .collect();
        Self::with_mask(disparity, valid)
    }

    pub fn with_mask(disparity: Tensor<T>, valid: Vec<bool>) -> Result<Self> {
        if disparity.rank() != 4 || disparity.dim(0) != 1 || disparity.dim(1) != 1 {
            return Err(Error::shape("ground truth", format!("expected [1, 1, H, W], got {:?}", disparity.shape())));
        }
        if valid.len() != disparity.numel() {
            return Err(Error::shape(
                "ground truth",
                format!("mask has {} entries for {} pixels", valid.len(), disparity.numel()),
            ));
        }
        Ok(GroundTruth { disparity, valid })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w1: 0.4, w2: 1.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) || self.w1 + self.w2 <= 0.0 {
            return Err(Error::invalid(format!(
                "loss weights must be non-negative and not both zero, got w1={} w2={}",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

/// Stacks `L` slices `[1, 1, h, w]` into `[1, L, h, w]`, resizes spatially
/// to `H x W` and resamples the level axis to `D` entries.
///
/// Both resamplings are linear with aligned end points, so level `i` lands
/// at disparity `i (D - 1) / (L - 1)`.
pub fn upsample_cost<T: Real>(slices: &[Var<T>], height: usize, width: usize, d_max: usize) -> Result<Var<T>> {
    if slices.is_empty() || d_max == 0 {
        return Err(Error::invalid("need at least one slice and a positive disparity range"));
    }
    let refs: Vec<&Var<T>> = slices.iter().collect();
    let stacked = ops::concat(&refs, 1)?;
    if stacked.shape()[1] != slices.len() {
        return Err(Error::shape("upsample_cost", "slices must be single-channel"));
    }
    let spatial = ops::bilinear_resize2d(&stacked, height, width, true)?;
    ops::linear_resample_axis(&spatial, 1, d_max)
}

/// `d(x,y) = sum_k k softmax_k(-C(k,x,y))` over axis 1 of `[1, D, H, W]`,
/// returning `[1, 1, H, W]`.
pub fn soft_argmin_batch<T: Real>(volume: &Var<T>) -> Result<Var<T>> {
    let s = volume.shape().to_vec();
    if s.len() != 4 || s[0] != 1 || s[1] == 0 {
        return Err(Error::shape("soft_argmin", format!("expected [1, D, H, W], got {s:?}")));
    }
    let (d, plane) = (s[1], s[2] * s[3]);
    let c = volume.value().data();
    // Exponentials and sums are taken in f64 at either precision.
    let mut out = vec![T::zero(); plane];
    for (p, o) in out.iter_mut().enumerate() {
        let m = (0..d).map(|k| -c[k * plane + p].to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut acc) = (0.0f64, 0.0f64);
        for k in 0..d {
            let e = (-c[k * plane + p].to_f64() - m).exp();
            z += e;
            acc += e * k as f64;
        }
        *o = T::from_f64(acc / z);
    }
    let value = Tensor::from_parts(vec![1, 1, s[2], s[3]], out);
    let keep_input = Var::records(&[volume]).then(|| volume.value().clone());
    let keep_output = keep_input.as_ref().map(|_| value.clone());
    Ok(Var::from_op(value, &[volume], move |g| {
        let (c, dhat) = (keep_input.as_ref().unwrap(), keep_output.as_ref().unwrap());
        let (c, dhat) = (c.data(), dhat.data());
        let mut dc = vec![T::zero(); d * plane];
        for p in 0..plane {
            let m = (0..d).map(|k| -c[k * plane + p].to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..d).map(|k| (-c[k * plane + p].to_f64() - m).exp()).sum();
            let (gp, dp) = (g.data()[p].to_f64(), dhat[p].to_f64());
            for k in 0..d {
                let prob = (-c[k * plane + p].to_f64() - m).exp() / z;
                dc[k * plane + p] = T::from_f64(-gp * prob * (k as f64 - dp));
            }
        }
        vec![Some(Tensor::from_parts(vec![1, d, s[2], s[3]], dc))]
    }))
}

/// Soft argmin computed while slices arrive, without ever holding the
/// `D x H x W` volume.
///
/// Each slice is resized to `H x W` once; the disparity-axis resampling needs
/// only the previous and current slice, so every full-resolution entry `k`
/// is produced as soon as both of its neighbouring levels are known and is
/// folded into a running, max-rescaled softmax.
pub struct StreamingSoftArgmin<T: Real> {
    levels: usize,
    d_max: usize,
    height: usize,
    width: usize,
    slice_h: usize,
    slice_w: usize,
    row_taps: Vec<LinearTap<T>>,
    col_taps: Vec<LinearTap<T>>,
    disparity_taps: Vec<LinearTap<T>>,
    next_entry: usize,
    received: usize,
    prev: Vec<T>,
    cur: Vec<T>,
    // Running softmax state, kept in f64 like the batch reduction.
    max: Vec<f64>,
    norm: Vec<f64>,
    weighted: Vec<f64>,
}

impl<T: Real> StreamingSoftArgmin<T> {
    /// `levels` slices of `slice_h x slice_w` will be pushed, producing a
    /// `height x width` map over `d_max` disparities.
    pub fn new(
        levels: usize,
        slice_h: usize,
        slice_w: usize,
        height: usize,
        width: usize,
        d_max: usize,
    ) -> Result<Self> {
        if levels == 0 || d_max == 0 || slice_h == 0 || slice_w == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("streaming soft argmin needs positive sizes"));
        }
        let plane = height * width;
        Ok(StreamingSoftArgmin {
            levels,
            d_max,
            height,
            width,
            slice_h,
            slice_w,
            row_taps: linear_taps(slice_h, height, true),
            col_taps: linear_taps(slice_w, width, true),
            disparity_taps: linear_taps(levels, d_max, true),
            next_entry: 0,
            received: 0,
            prev: vec![T::zero(); plane],
            cur: vec![T::zero(); plane],
            max: vec![f64::NEG_INFINITY; plane],
            norm: vec![0.0; plane],
            weighted: vec![0.0; plane],
        })
    }

    pub fn received(&self) -> usize {
        self.received
    }

    /// Bytes held by the three accumulators and the two slice buffers.
    pub fn buffer_bytes(&self) -> usize {
        self.height * self.width * (3 * std::mem::size_of::<f64>() + 2 * std::mem::size_of::<T>())
    }

    /// Feeds the slice for `level`, which must be the next one in order.
    pub fn push(&mut self, level: usize, slice: &Tensor<T>) -> Result<()> {
        if level != self.received {
            return Err(Error::invalid(format!(
                "slice for level {level} arrived out of order, expected {}",
                self.received
            )));
        }
        if level >= self.levels {
            return Err(Error::invalid(format!("only {} levels were announced", self.levels)));
        }
        if slice.numel() != self.slice_h * self.slice_w {
            return Err(Error::shape(
                "streaming soft argmin",
                format!("slice {:?} for a {}x{} grid", slice.shape(), self.slice_h, self.slice_w),
            ));
        }
        std::mem::swap(&mut self.prev, &mut self.cur);
        resize_plane(slice.data(), self.slice_w, &self.row_taps, &self.col_taps, &mut self.cur);
        self.received += 1;
        // Entries whose upper tap is now available.
        while self.next_entry < self.d_max && self.disparity_taps[self.next_entry].hi < self.received {
            self.fold_entry(self.next_entry);
            self.next_entry += 1;
        }
        Ok(())
    }

    fn fold_entry(&mut self, k: usize) {
        let tap = self.disparity_taps[k];
        let newest = self.received - 1;
        let pick = |level: usize, prev: &[T], cur: &[T], p: usize| {
            if level == newest {
                cur[p]
            } else {
                prev[p]
            }
        };
        let kk = k as f64;
        for p in 0..self.height * self.width {
            let lo = pick(tap.lo, &self.prev, &self.cur, p);
            let hi = pick(tap.hi, &self.prev, &self.cur, p);
            let score = -ops::lerp(&tap, lo, hi).to_f64();
            let m = self.max[p];
            if score > m {
                let rescale = (m - score).exp();
                self.norm[p] = self.norm[p] * rescale + 1.0;
                self.weighted[p] = self.weighted[p] * rescale + kk;
                self.max[p] = score;
            } else {
                let e = (score - m).exp();
                self.norm[p] += e;
                self.weighted[p] += e * kk;
            }
        }
    }

    pub fn finish(self) -> Result<DisparityMap<T>> {
        if self.received != self.levels {
            return Err(Error::invalid(format!(
                "received {} of {} slices",
                self.received, self.levels
            )));
        }
        debug_assert_eq!(self.next_entry, self.d_max);
        let data = self.weighted.iter().zip(&self.norm).map(|(&a, &z)| T::from_f64(a / z)).collect();
        Ok(DisparityMap {
            values: Tensor::from_vec(&[1, 1, self.height, self.width], data)?,
        })
    }
}

/// Runs [`StreamingSoftArgmin`] over `(level, slice)` pairs, which must
/// arrive in ascending level order starting at 0.
pub fn soft_argmin_streaming<T: Real>(
    slices: impl IntoIterator<Item = (usize, Tensor<T>)>,
    levels: usize,
    slice_dims: (usize, usize),
    out_dims: (usize, usize),
    d_max: usize,
) -> Result<DisparityMap<T>> {
    let mut acc = StreamingSoftArgmin::new(levels, slice_dims.0, slice_dims.1, out_dims.0, out_dims.1, d_max)?;
    for (level, slice) in slices {
        acc.push(level, &slice)?;
    }
    acc.finish()
}

/// Mean smooth-L1 (Huber, threshold 1) over the valid pixels.
pub fn smooth_l1<T: Real>(pred: &Var<T>, gt: &GroundTruth<T>) -> Result<Var<T>> {
    if pred.shape() != gt.disparity.shape() {
        return Err(Error::shape(
            "smooth_l1",
            format!("prediction {:?} against ground truth {:?}", pred.shape(), gt.disparity.shape()),
        ));
    }
    let n = gt.valid_count();
    if n == 0 {
        return Err(Error::invalid("ground truth has no valid pixels"));
    }
    let inv = T::one() / T::from_usize(n);
    let half = T::from_f64(0.5);
    let mut total = T::zero();
    for ((&p, &g), &ok) in pred.value().data().iter().zip(gt.disparity.data()).zip(&gt.valid) {
        if ok {
            let e = (p - g).abs();
            total += if e < T::one() { half * e * e } else { e - half };
        }
    }
    let keep = Var::records(&[pred]).then(|| (pred.value().clone(), gt.clone()));
    Ok(Var::from_op(Tensor::scalar(total * inv), &[pred], move |g| {
        let (p, gt) = keep.as_ref().unwrap();
        let scale = g.data()[0] * inv;
        let d = p
            .data()
            .iter()
            .zip(gt.disparity.data())
            .zip(&gt.valid)
            .map(|((&p, &t), &ok)| {
                if ok {
                    (p - t).max(-T::one()).min(T::one()) * scale
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![Some(Tensor::from_parts(p.shape().to_vec(), d))]
    }))
}

/// `w1 L(d_m) + w2 L(d_f)`.
pub fn total_loss<T: Real>(
    intermediate: &Var<T>,
    final_: &Var<T>,
    gt: &GroundTruth<T>,
    weights: LossWeights,
) -> Result<Var<T>> {
    weights.validate()?;
    let a = ops::scale(&smooth_l1(intermediate, gt)?, weights.w1);
    let b = ops::scale(&smooth_l1(final_, gt)?, weights.w2);
    ops::add(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_argmin_is_in_range_and_picks_minimum() {
        let vol = Var::constant(Tensor::<f64>::from_fn(&[1, 5, 1, 2], |i| {
            let (k, p) = (i / 2, i % 2);
            if k == 3 - p { -50.0 } else { 0.0 }
        }));
        let d = soft_argmin_batch(&vol).unwrap();
        assert!((d.value().data()[0] - 3.0).abs() < 1e-9);
        assert!((d.value().data()[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_cost_gives_midpoint() {
        let vol = Var::constant(Tensor::<f64>::full(&[1, 7, 2, 2], 0.3));
        let d = soft_argmin_batch(&vol).unwrap();
        assert!(d.value().data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn streaming_rejects_out_of_order() {
        let mut s = StreamingSoftArgmin::<f64>::new(3, 2, 2, 4, 4, 8).unwrap();
        let slice = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(s.push(1, &slice).is_err());
        s.push(0, &slice).unwrap();
        assert!(s.push(0, &slice).is_err());
        s.push(1, &slice).unwrap();
        assert!(s.push(2, &Tensor::zeros(&[1, 1, 3, 2])).is_err());
    }

    #[test]
    fn streaming_incomplete_is_an_error() {
        let mut s = StreamingSoftArgmin::<f64>::new(2, 1, 1, 1, 1, 4).unwrap();
        s.push(0, &Tensor::zeros(&[1, 1, 1, 1])).unwrap();
        assert!(s.finish().is_err());
    }

    #[test]
    fn smooth_l1_branches() {
        let gt = GroundTruth::new(Tensor::<f64>::from_vec(&[1, 1, 1, 4], vec![2.0, 2.0, 2.0, 0.0]).unwrap(), 8).unwrap();
        assert_eq!(gt.valid, vec![true, true, true, false]);
        let pred = Var::constant(Tensor::from_vec(&[1, 1, 1, 4], vec![2.5, 5.0, 2.0, 100.0]).unwrap());
        let loss = smooth_l1(&pred, &gt).unwrap();
        let expected = (0.125 + 2.5 + 0.0) / 3.0;
        assert!((loss.value().data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_weights_validated() {
        assert!(LossWeights { w1: 0.0, w2: 0.0 }.validate().is_err());
        assert!(LossWeights { w1: -1.0, w2: 1.0 }.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
