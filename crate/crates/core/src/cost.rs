//! Disparity-ordered cost maps, built one level at a time.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::ops;
use crate::tensor::Real;

/// Full-resolution disparity bound and the feature-scale level count it
/// implies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DisparityRange {
    /// `D`, exclusive upper bound at full resolution.
    pub d_max: usize,
    /// Downsample factor `s` between image and feature resolution.
    pub downsample: usize,
    /// Number of feature-scale levels `L`.
    pub levels: usize,
}

impl DisparityRange {
    /// `L = ceil(D / s)`.
    pub fn new(d_max: usize, downsample: usize) -> Result<Self> {
        if downsample == 0 {
            return Err(Error::invalid("downsample factor must be positive"));
        }
        Self::with_levels(d_max, downsample, d_max.div_ceil(downsample))
    }

    /// An explicit level count, for when the number of slices should not
    /// follow from `D / s`.
    pub fn with_levels(d_max: usize, downsample: usize, levels: usize) -> Result<Self> {
        if d_max == 0 || downsample == 0 || levels == 0 {
            return Err(Error::invalid(format!(
                "disparity range needs positive values, got D={d_max} s={downsample} L={levels}"
            )));
        }
        Ok(DisparityRange {
            d_max,
            downsample,
            levels,
        })
    }
}

/// The matching cost at one feature-scale disparity `i`: left features
/// concatenated with right features shifted `i` columns, `[1, 2 Cf, h, w]`.
#[derive(Clone, Debug)]
pub struct CostMap<T: Real> {
    pub level: usize,
    pub values: Var<T>,
}

/// Right features shifted right by `i` columns, zero where `u < i`. A shift
/// of the full width or more gives all zeros; level bounds are enforced by
/// [`cost_sequence`].
pub fn warp_features<T: Real>(right: &FeatureMap<T>, i: usize) -> Result<Var<T>> {
    ops::shift_columns(&right.values, i)
}

pub fn build_cost_map<T: Real>(left: &FeatureMap<T>, right: &FeatureMap<T>, i: usize) -> Result<CostMap<T>> {
    if left.values.shape() != right.values.shape() {
        return Err(Error::shape(
            "build_cost_map",
            format!("left {:?} right {:?}", left.values.shape(), right.values.shape()),
        ));
    }
    let warped = warp_features(right, i)?;
    Ok(CostMap {
        level: i,
        values: ops::concat(&[&left.values, &warped], 1)?,
    })
}

/// Lazily yields the cost maps for levels `0..L` in increasing order; at
/// most one map is alive unless the caller keeps them.
pub struct CostSequence<'a, T: Real> {
    left: &'a FeatureMap<T>,
    right: &'a FeatureMap<T>,
    next: usize,
    levels: usize,
}

impl<T: Real> Iterator for CostSequence<'_, T> {
    type Item = Result<CostMap<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.levels {
            return None;
        }
        let i = self.next;
        self.next += 1;
        Some(build_cost_map(self.left, self.right, i))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.levels - self.next;
        (n, Some(n))
    }
}

impl<T: Real> ExactSizeIterator for CostSequence<'_, T> {}

pub fn cost_sequence<'a, T: Real>(
    left: &'a FeatureMap<T>,
    right: &'a FeatureMap<T>,
    range: &DisparityRange,
) -> Result<CostSequence<'a, T>> {
    if left.values.shape() != right.values.shape() {
        return Err(Error::shape(
            "cost_sequence",
            format!("left {:?} right {:?}", left.values.shape(), right.values.shape()),
        ));
    }
    if range.levels > left.width() {
        return Err(Error::Geometry(format!(
            "{} disparity levels need a feature map at least that wide, got {} columns",
            range.levels,
            left.width()
        )));
    }
    Ok(CostSequence {
        left,
        right,
        next: 0,
        levels: range.levels,
    })
}
