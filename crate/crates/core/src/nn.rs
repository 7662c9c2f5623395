//! Named parameters and the convolution layers built on them.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::ops;
use crate::tensor::{Real, Tensor};

/// A trainable tensor with a stable, hierarchical name (`"srh.hg1.down1.weight"`).
#[derive(Clone)]
pub struct Param<T: Real> {
    name: String,
    var: Var<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            var: Var::parameter(value),
        }
    }

    /// Wraps an existing graph node, e.g. one that is itself being
    /// differentiated by a caller.
    pub fn from_var(name: impl Into<String>, var: Var<T>) -> Self {
        Param { name: name.into(), var }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn var(&self) -> &Var<T> {
        &self.var
    }

    pub fn value(&self) -> &Tensor<T> {
        self.var.value()
    }

    pub fn shape(&self) -> &[usize] {
        self.var.shape()
    }

    /// Replaces the value with a fresh leaf.
    pub fn set_value(&mut self, value: Tensor<T>) {
        self.var = Var::parameter(value);
    }
}

pub trait Module<T: Real> {
    fn params(&self) -> Vec<&Param<T>>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value().numel()).sum()
    }
}

/// Uniform in `[-b, b]` with `b = sqrt(3 / fan_in)` (unit-variance preserving
/// for linear maps). Drawn in f64 so both precisions start from the same
/// weights for a given seed.
pub fn fan_in_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
}

#[derive(Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    /// A `kernel x kernel` convolution with "same" padding at stride 1.
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: Param::new(
                format!("{name}.weight"),
                fan_in_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        ops::conv2d(x, self.weight.var(), Some(self.bias.var()), self.stride, self.pad)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stride-2, 4x4 transposed convolution that exactly doubles spatial size.
#[derive(Clone)]
pub struct Upsample2x<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Upsample2x<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        // Each output pixel sees 2x2 taps per input channel.
        let fan_in = in_channels * 4;
        Upsample2x {
            weight: Param::new(
                format!("{name}.weight"),
                fan_in_uniform(&[in_channels, out_channels, 4, 4], fan_in, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
        }
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        ops::conv_transpose2d(x, self.weight.var(), Some(self.bias.var()), 2, 1)
    }
}

impl<T: Real> Module<T> for Upsample2x<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upsample_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let up = Upsample2x::<f64>::new("up", 4, 2, &mut rng);
        let x = Var::constant(Tensor::zeros(&[1, 4, 3, 5]));
        assert_eq!(up.forward(&x).unwrap().shape(), &[1, 2, 6, 10]);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let c32 = Conv2d::<f32>::new("c", 8, 4, 3, 1, &mut a);
        let c64 = Conv2d::<f64>::new("c", 8, 4, 3, 1, &mut b);
        let bound = (3.0f64 / 72.0).sqrt();
        assert!(c64.weight.value().max_abs() <= bound);
        assert_eq!(c32.weight.value(), &c64.weight.value().cast::<f32>());
        assert_eq!(c32.weight.name(), "c.weight");
    }
}
