use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const EPS: f64 = 1e-5;

/// Per-sample, per-channel normalisation to zero mean and unit variance
/// over the spatial axes of `[N, C, H, W]`. No affine parameters.
pub fn instance_norm2d<T: Real>(input: &Var<T>) -> Result<Var<T>> {
    let shape = input.shape().to_vec();
    if shape.len() != 4 || shape[2] * shape[3] == 0 {
        return Err(Error::shape("instance_norm2d", format!("{shape:?}")));
    }
    let plane = shape[2] * shape[3];
    let n = T::from_usize(plane);
    let eps = T::from_f64(EPS);
    let x = input.value().data();
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / plane);
    for (src, dst) in x.chunks(plane).zip(out.chunks_mut(plane)) {
        let mean = src.iter().copied().sum::<T>() / n;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    let value = Tensor::from_parts(shape.clone(), out);
    let y = value.clone();
    Ok(Var::from_op(value, &[input], move |g| {
        // dx = inv / n * (n g - sum g - y sum(g y))
        let mut dx = vec![T::zero(); g.numel()];
        for (((gp, yp), dp), &inv) in g
            .data()
            .chunks(plane)
            .zip(y.data().chunks(plane))
            .zip(dx.chunks_mut(plane))
            .zip(&inv_std)
        {
            let sg: T = gp.iter().copied().sum();
            let sgy: T = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum();
            for ((d, &gv), &yv) in dp.iter_mut().zip(gp).zip(yp) {
                *d = inv / n * (n * gv - sg - yv * sgy);
            }
        }
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    }))
}
