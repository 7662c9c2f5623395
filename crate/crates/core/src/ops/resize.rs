//! Linear interpolation along one axis and bilinear resizing of images.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{split_axis, Real, Tensor};

/// One output sample of a 1-D linear interpolation: the two source indices
/// and the weight of the second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearTap<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

/// Source taps for resampling `in_len` samples onto `out_len` samples.
///
/// With `align_corners` the first and last samples of both grids coincide;
/// otherwise the grids are treated as pixel centres and sampling clamps at
/// the borders.
pub fn linear_taps<T: Real>(in_len: usize, out_len: usize, align_corners: bool) -> Vec<LinearTap<T>> {
    (0..out_len)
        .map(|j| {
            let pos = if in_len == 1 {
                0.0
            } else if align_corners {
                if out_len == 1 {
                    0.0
                } else {
                    j as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
                }
            } else {
                ((j as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5)
                    .clamp(0.0, (in_len - 1) as f64)
            };
            let lo = (pos.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { pos - lo as f64 };
            LinearTap {
                lo,
                hi,
                frac: T::from_f64(frac),
            }
        })
        .collect()
}

/// Evaluates one tap on two source values.
#[inline]
pub fn lerp<T: Real>(tap: &LinearTap<T>, lo: T, hi: T) -> T {
    lo * (T::one() - tap.frac) + hi * tap.frac
}

/// Linearly resamples `input` along `axis` to `out_len` samples, with the
/// end samples of both grids aligned.
pub fn linear_resample_axis<T: Real>(input: &Var<T>, axis: usize, out_len: usize) -> Result<Var<T>> {
    let shape = input.shape().to_vec();
    if axis >= shape.len() || out_len == 0 || shape[axis] == 0 {
        return Err(Error::shape(
            "linear_resample_axis",
            format!("axis {axis} of {shape:?} to length {out_len}"),
        ));
    }
    let (outer, in_len, inner) = split_axis(&shape, axis);
    let taps = linear_taps::<T>(in_len, out_len, true);
    let x = input.value().data();
    let mut out = vec![T::zero(); outer * out_len * inner];
    for o in 0..outer {
        for (j, tap) in taps.iter().enumerate() {
            let a = &x[(o * in_len + tap.lo) * inner..][..inner];
            let b = &x[(o * in_len + tap.hi) * inner..][..inner];
            let dst = &mut out[(o * out_len + j) * inner..][..inner];
            for ((d, &va), &vb) in dst.iter_mut().zip(a).zip(b) {
                *d = lerp(tap, va, vb);
            }
        }
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = out_len;
    let value = Tensor::from_parts(out_shape, out);
    Ok(Var::from_op(value, &[input], move |g| {
        let mut dx = vec![T::zero(); outer * in_len * inner];
        for o in 0..outer {
            for (j, tap) in taps.iter().enumerate() {
                let src = &g.data()[(o * out_len + j) * inner..][..inner];
                let wa = T::one() - tap.frac;
                for (i, &gv) in src.iter().enumerate() {
                    dx[(o * in_len + tap.lo) * inner + i] += gv * wa;
                    dx[(o * in_len + tap.hi) * inner + i] += gv * tap.frac;
                }
            }
        }
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    }))
}

/// Bilinear resize of the two trailing axes of `[N, C, H, W]` to `out_h x out_w`.
pub fn bilinear_resize2d<T: Real>(
    input: &Var<T>,
    out_h: usize,
    out_w: usize,
    align_corners: bool,
) -> Result<Var<T>> {
    let shape = input.shape().to_vec();
    if shape.len() != 4 || out_h == 0 || out_w == 0 || shape[2] == 0 || shape[3] == 0 {
        return Err(Error::shape(
            "bilinear_resize2d",
            format!("{shape:?} to {out_h}x{out_w}"),
        ));
    }
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let ty = linear_taps::<T>(h, out_h, align_corners);
    let tx = linear_taps::<T>(w, out_w, align_corners);
    let x = input.value().data();
    let mut out = vec![T::zero(); planes * out_h * out_w];
    for p in 0..planes {
        resize_plane(&x[p * h * w..(p + 1) * h * w], w, &ty, &tx, &mut out[p * out_h * out_w..(p + 1) * out_h * out_w]);
    }
    let value = Tensor::from_parts(vec![shape[0], shape[1], out_h, out_w], out);
    Ok(Var::from_op(value, &[input], move |g| {
        let mut dx = vec![T::zero(); planes * h * w];
        for p in 0..planes {
            let src = &g.data()[p * out_h * out_w..(p + 1) * out_h * out_w];
            let dst = &mut dx[p * h * w..(p + 1) * h * w];
            for (oy, a) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::one() - a.frac, a.frac);
                for (ox, b) in tx.iter().enumerate() {
                    let gv = src[oy * out_w + ox];
                    let (wx0, wx1) = (T::one() - b.frac, b.frac);
                    dst[a.lo * w + b.lo] += gv * wy0 * wx0;
                    dst[a.lo * w + b.hi] += gv * wy0 * wx1;
                    dst[a.hi * w + b.lo] += gv * wy1 * wx0;
                    dst[a.hi * w + b.hi] += gv * wy1 * wx1;
                }
            }
        }
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    }))
}

/// Resizes one `h x w` plane (row length `w`) with precomputed taps.
pub fn resize_plane<T: Real>(
    src: &[T],
    w: usize,
    ty: &[LinearTap<T>],
    tx: &[LinearTap<T>],
    dst: &mut [T],
) {
    let out_w = tx.len();
    for (oy, a) in ty.iter().enumerate() {
        let r0 = &src[a.lo * w..(a.lo + 1) * w];
        let r1 = &src[a.hi * w..(a.hi + 1) * w];
        for (ox, b) in tx.iter().enumerate() {
            let top = lerp(b, r0[b.lo], r0[b.hi]);
            let bottom = lerp(b, r1[b.lo], r1[b.hi]);
            dst[oy * out_w + ox] = lerp(a, top, bottom);
        }
    }
}
