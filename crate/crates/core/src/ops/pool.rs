use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Average pooling over `window` with `stride`, no padding.
pub fn avg_pool2d<T: Real>(
    input: &Var<T>,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Var<T>> {
    let s = input.shape().to_vec();
    let (kh, kw) = window;
    let (sh, sw) = stride;
    if s.len() != 4 || kh == 0 || kw == 0 || sh == 0 || sw == 0 || s[2] < kh || s[3] < kw {
        return Err(Error::shape(
            "avg_pool2d",
            format!("window {window:?} stride {stride:?} on {s:?}"),
        ));
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (oh, ow) = ((h - kh) / sh + 1, (w - kw) / sw + 1);
    let inv = T::one() / T::from_usize(kh * kw);
    let x = input.value().data();
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ky in 0..kh {
                    let row = &src[(oy * sh + ky) * w + ox * sw..][..kw];
                    acc += row.iter().copied().sum::<T>();
                }
                out[(p * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    let value = Tensor::from_parts(vec![s[0], s[1], oh, ow], out);
    Ok(Var::from_op(value, &[input], move |g| {
        let mut dx = vec![T::zero(); planes * h * w];
        for p in 0..planes {
            let dst = &mut dx[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = g.data()[(p * oh + oy) * ow + ox] * inv;
                    for ky in 0..kh {
                        for v in &mut dst[(oy * sh + ky) * w + ox * sw..][..kw] {
                            *v += gv;
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(s.clone(), dx))]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_mean() {
        let x = Var::constant(Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = avg_pool2d(&x, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.value().data(), &[2.5]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Var::constant(Tensor::<f64>::full(&[1, 3, 8, 12], 0.75));
        let y = avg_pool2d(&x, (4, 3), (4, 3)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 4]);
        assert!(y.value().data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn window_larger_than_input_rejected() {
        let x = Var::constant(Tensor::<f64>::zeros(&[1, 1, 2, 2]));
        assert!(avg_pool2d(&x, (3, 3), (1, 1)).is_err());
    }
}
