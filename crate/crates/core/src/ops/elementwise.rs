use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// How the smaller operand repeats over the larger one.
#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    /// Right operand repeats over the left.
    Right,
    /// Left operand repeats over the right.
    Left,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if a.len() > b.len() && a.ends_with(b) {
        Ok(Broadcast::Right)
    } else if b.len() > a.len() && b.ends_with(a) {
        Ok(Broadcast::Left)
    } else {
        Err(Error::shape(op, format!("{a:?} and {b:?} do not broadcast")))
    }
}

fn combine<T: Real>(a: &[T], b: &[T], mode: Broadcast, f: impl Fn(T, T) -> T) -> Vec<T> {
    match mode {
        Broadcast::Same => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Right => a
            .iter()
            .zip(b.iter().cycle())
            .map(|(&x, &y)| f(x, y))
            .collect(),
        Broadcast::Left => b
            .iter()
            .zip(a.iter().cycle())
            .map(|(&y, &x)| f(x, y))
            .collect(),
    }
}

/// Sums `grad` down to `shape` when `shape` is a trailing suffix of it.
fn reduce_to<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![T::zero(); n];
    for chunk in grad.data().chunks(n) {
        for (o, &g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

fn out_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    if a.len() >= b.len() {
        a.to_vec()
    } else {
        b.to_vec()
    }
}

pub fn add<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let mode = broadcast("add", a.shape(), b.shape())?;
    let shape = out_shape(a.shape(), b.shape());
    let value = Tensor::from_parts(
        shape,
        combine(a.value().data(), b.value().data(), mode, |x, y| x + y),
    );
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    Ok(Var::from_op(value, &[a, b], move |g| {
        vec![Some(reduce_to(g, &sa)), Some(reduce_to(g, &sb))]
    }))
}

pub fn sub<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let mode = broadcast("sub", a.shape(), b.shape())?;
    let shape = out_shape(a.shape(), b.shape());
    let value = Tensor::from_parts(
        shape,
        combine(a.value().data(), b.value().data(), mode, |x, y| x - y),
    );
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    Ok(Var::from_op(value, &[a, b], move |g| {
        vec![
            Some(reduce_to(g, &sa)),
            Some(reduce_to(&g.map(|x| -x), &sb)),
        ]
    }))
}

pub fn mul<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let mode = broadcast("mul", a.shape(), b.shape())?;
    let shape = out_shape(a.shape(), b.shape());
    let value = Tensor::from_parts(
        shape.clone(),
        combine(a.value().data(), b.value().data(), mode, |x, y| x * y),
    );
    let (av, bv) = (a.value().clone(), b.value().clone());
    Ok(Var::from_op(value, &[a, b], move |g| {
        // dL/da = g * b and dL/db = g * a, each reduced to its own shape.
        let ga = combine(g.data(), bv.data(), Broadcast::Right.or_same(g, &bv), |x, y| x * y);
        let gb = combine(g.data(), av.data(), Broadcast::Right.or_same(g, &av), |x, y| x * y);
        vec![
            Some(reduce_to(&Tensor::from_parts(shape.clone(), ga), av.shape())),
            Some(reduce_to(&Tensor::from_parts(shape.clone(), gb), bv.shape())),
        ]
    }))
}

impl Broadcast {
    fn or_same<T: Real>(self, full: &Tensor<T>, part: &Tensor<T>) -> Broadcast {
        if full.shape() == part.shape() {
            Broadcast::Same
        } else {
            self
        }
    }
}

pub fn scale<T: Real>(x: &Var<T>, factor: f64) -> Var<T> {
    let c = T::from_f64(factor);
    let value = x.value().map(|v| v * c);
    Var::from_op(value, &[x], move |g| vec![Some(g.map(|v| v * c))])
}

/// `c - x`, elementwise.
pub fn rsub_scalar<T: Real>(c: f64, x: &Var<T>) -> Var<T> {
    let c = T::from_f64(c);
    let value = x.value().map(|v| c - v);
    Var::from_op(value, &[x], move |g| vec![Some(g.map(|v| -v))])
}

pub fn sum<T: Real>(x: &Var<T>) -> Var<T> {
    let value = Tensor::scalar(x.value().sum());
    let shape = x.shape().to_vec();
    Var::from_op(value, &[x], move |g| vec![Some(Tensor::full(&shape, g.data()[0]))])
}

pub fn mean<T: Real>(x: &Var<T>) -> Var<T> {
    let n = x.value().numel().max(1);
    let inv = T::one() / T::from_usize(n);
    let value = Tensor::scalar(x.value().sum() * inv);
    let shape = x.shape().to_vec();
    Var::from_op(value, &[x], move |g| {
        vec![Some(Tensor::full(&shape, g.data()[0] * inv))]
    })
}

pub fn sigmoid<T: Real>(x: &Var<T>) -> Var<T> {
    let y = x.value().map(|v| {
        // Split by sign so exp never overflows.
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    });
    let out = y.clone();
    Var::from_op(y, &[x], move |g| {
        let d = g
            .zip_map(&out, |gv, s| gv * s * (T::one() - s))
            .expect("shape");
        vec![Some(d)]
    })
}

pub fn tanh<T: Real>(x: &Var<T>) -> Var<T> {
    let y = x.value().map(T::tanh);
    let out = y.clone();
    Var::from_op(y, &[x], move |g| {
        let d = g
            .zip_map(&out, |gv, t| gv * (T::one() - t * t))
            .expect("shape");
        vec![Some(d)]
    })
}

pub fn relu<T: Real>(x: &Var<T>) -> Var<T> {
    let y = x.value().map(|v| v.max(T::zero()));
    let input = x.value().clone();
    Var::from_op(y, &[x], move |g| {
        let d = g
            .zip_map(&input, |gv, v| if v > T::zero() { gv } else { T::zero() })
            .expect("shape");
        vec![Some(d)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(shape: &[usize], f: impl Fn(usize) -> f64) -> Var<f64> {
        Var::parameter(Tensor::from_fn(shape, f))
    }

    #[test]
    fn identities() {
        let x = var(&[2, 3], |i| i as f64 * 0.7 - 1.0);
        let zero = Var::constant(Tensor::zeros(&[2, 3]));
        let one = Var::constant(Tensor::ones(&[2, 3]));
        assert_eq!(add(&x, &zero).unwrap().value(), x.value());
        assert_eq!(mul(&x, &one).unwrap().value(), x.value());
    }

    #[test]
    fn activations_at_zero() {
        let z = var(&[1], |_| 0.0);
        assert_eq!(sigmoid(&z).value().data()[0], 0.5);
        assert_eq!(tanh(&z).value().data()[0], 0.0);
        assert_eq!(relu(&z).value().data()[0], 0.0);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        let x = var(&[2], |i| if i == 0 { -800.0 } else { 800.0 });
        let y = sigmoid(&x);
        assert_eq!(y.value().data(), &[0.0, 1.0]);
    }

    #[test]
    fn trailing_broadcast_reduces_gradient() {
        let a = var(&[2, 3], |i| i as f64);
        let b = var(&[3], |i| 10.0 * i as f64);
        let y = add(&a, &b).unwrap();
        assert_eq!(y.value().data(), &[0.0, 11.0, 22.0, 3.0, 14.0, 25.0]);
        let grads = sum(&mul(&y, &b).unwrap()).backward().unwrap();
        assert_eq!(grads.get(&b).unwrap().shape(), &[3]);
        // d/db sum((a + b) * b) = sum over rows of (a + 2b)
        let expected = [0.0 + 3.0, 1.0 + 4.0 + 40.0, 2.0 + 5.0 + 80.0];
        assert_eq!(grads.get(&b).unwrap().data(), &expected);
        let left = add(&b, &a).unwrap();
        assert_eq!(left.value(), y.value());
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = var(&[2, 3], |_| 0.0);
        let b = var(&[2], |_| 0.0);
        assert!(add(&a, &b).is_err());
        assert!(mul(&a, &b).is_err());
    }
}
