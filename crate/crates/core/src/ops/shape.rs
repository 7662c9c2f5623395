use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{split_axis, Real, Tensor};

/// Concatenates along `axis`. All other extents must agree.
pub fn concat<T: Real>(parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::shape("concat", format!("axis {axis} of rank {rank}")));
    }
    for p in parts {
        let s = p.shape();
        let same_rest = s.len() == rank
            && (0..rank).all(|d| d == axis || s[d] == first.shape()[d]);
        if !same_rest {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {s:?} on axis {axis}", first.shape()),
            ));
        }
    }
    let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let mut shape = first.shape().to_vec();
    shape[axis] = total;

    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &len) in parts.iter().zip(&lens) {
            let block = len * inner;
            data.extend_from_slice(&p.value().data()[o * block..(o + 1) * block]);
        }
    }
    let value = Tensor::from_parts(shape, data);
    let part_shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
    Ok(Var::from_op(value, parts, move |g| {
        let mut grads: Vec<Vec<T>> = lens
            .iter()
            .map(|&len| Vec::with_capacity(outer * len * inner))
            .collect();
        let mut offset = 0;
        for _ in 0..outer {
            for (gp, &len) in grads.iter_mut().zip(&lens) {
                gp.extend_from_slice(&g.data()[offset..offset + len * inner]);
                offset += len * inner;
            }
        }
        grads
            .into_iter()
            .zip(&part_shapes)
            .map(|(d, s)| Some(Tensor::from_parts(s.clone(), d)))
            .collect()
    }))
}

/// Selects `[start, start + len)` along `axis`.
pub fn narrow<T: Real>(x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(Error::shape(
            "narrow",
            format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
        ));
    }
    let (outer, full, inner) = split_axis(&shape, axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        data.extend_from_slice(&x.value().data()[base..base + len * inner]);
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let value = Tensor::from_parts(out_shape, data);
    Ok(Var::from_op(value, &[x], move |g| {
        let mut d = vec![T::zero(); outer * full * inner];
        for o in 0..outer {
            let base = (o * full + start) * inner;
            d[base..base + len * inner]
                .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(Tensor::from_parts(shape.clone(), d))]
    }))
}

pub fn reshape<T: Real>(x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
    let value = x.value().reshape(shape)?;
    let original = x.shape().to_vec();
    Ok(Var::from_op(value, &[x], move |g| {
        vec![Some(g.reshape(&original).expect("reshape back"))]
    }))
}

/// Moves every element `shift` columns to the right along the last axis;
/// columns that would read from before column 0 are zero.
pub fn shift_columns<T: Real>(x: &Var<T>, shift: usize) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    let width = *shape
        .last()
        .ok_or_else(|| Error::shape("shift_columns", "rank-0 input"))?;
    let rows = x.value().numel() / width.max(1);
    let mut data = vec![T::zero(); x.value().numel()];
    if shift < width {
        for r in 0..rows {
            let src = &x.value().data()[r * width..r * width + width - shift];
            data[r * width + shift..(r + 1) * width].copy_from_slice(src);
        }
    }
    let value = Tensor::from_parts(shape.clone(), data);
    Ok(Var::from_op(value, &[x], move |g| {
        let mut d = vec![T::zero(); g.numel()];
        if shift < width {
            for r in 0..rows {
                let src = &g.data()[r * width + shift..(r + 1) * width];
                d[r * width..r * width + width - shift].copy_from_slice(src);
            }
        }
        vec![Some(Tensor::from_parts(shape.clone(), d))]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(shape: &[usize]) -> Var<f64> {
        Var::parameter(Tensor::from_fn(shape, |i| i as f64))
    }

    #[test]
    fn concat_channels() {
        let a = var(&[1, 32, 8, 8]);
        let b = var(&[1, 32, 8, 8]);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 64, 8, 8]);
        assert_eq!(&c.value().data()[..32 * 64], a.value().data());
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = var(&[1, 2, 4, 4]);
        let b = var(&[1, 2, 4, 5]);
        assert!(concat(&[&a, &b], 1).is_err());
        assert!(concat::<f64>(&[], 0).is_err());
    }

    #[test]
    fn narrow_inverts_concat() {
        let a = var(&[2, 3, 4]);
        let b = var(&[2, 5, 4]);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(narrow(&c, 1, 0, 3).unwrap().value(), a.value());
        assert_eq!(narrow(&c, 1, 3, 5).unwrap().value(), b.value());
        assert!(narrow(&c, 1, 6, 3).is_err());
    }

    #[test]
    fn shift_fills_with_zero() {
        let x = var(&[1, 1, 2, 4]);
        let y = shift_columns(&x, 1).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0, 1.0, 2.0, 0.0, 4.0, 5.0, 6.0]);
        let z = shift_columns(&x, 4).unwrap();
        assert!(z.value().data().iter().all(|&v| v == 0.0));
        assert_eq!(shift_columns(&x, 0).unwrap().value(), x.value());
    }
}
