use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{split_axis, Real, Tensor};

/// Softmax along `axis`, stabilised by subtracting the per-slice maximum.
pub fn softmax_axis<T: Real>(input: &Var<T>, axis: usize) -> Result<Var<T>> {
    let shape = input.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::shape("softmax_axis", format!("axis {axis} of {shape:?}")));
    }
    let (outer, len, inner) = split_axis(&shape, axis);
    let x = input.value().data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let m = (0..len).fold(T::neg_infinity(), |m, k| m.max(x[at(k)]));
            let mut z = T::zero();
            for k in 0..len {
                let e = (x[at(k)] - m).exp();
                out[at(k)] = e;
                z += e;
            }
            for k in 0..len {
                out[at(k)] /= z;
            }
        }
    }
    let value = Tensor::from_parts(shape.clone(), out);
    let y = value.clone();
    Ok(Var::from_op(value, &[input], move |g| {
        // dx_k = y_k (g_k - sum_j g_j y_j)
        let (yd, gd) = (y.data(), g.data());
        let mut dx = vec![T::zero(); yd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let dot: T = (0..len).map(|k| gd[at(k)] * yd[at(k)]).sum();
                for k in 0..len {
                    dx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                }
            }
        }
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    }))
}
