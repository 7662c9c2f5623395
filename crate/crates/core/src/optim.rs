//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }
}

/// One Adam update. `grads[i]` belongs to `params[i]`; a missing gradient
/// counts as zero.
pub fn adam_step<T: Real>(
    params: &mut [&mut Param<T>],
    grads: &[Option<&Tensor<T>>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters but {} gradients", params.len(), grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{}: gradient {:?} for {:?}", p.name(), g.shape(), p.shape()),
                ));
            }
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len()
        || state.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
    {
        return Err(Error::shape(
            "adam_step",
            "parameter set differs from the one the moments were built for",
        ));
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (c1, c2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    let correct1 = T::from_f64(1.0 / (1.0 - beta1.powi(t)));
    let correct2 = T::from_f64(1.0 / (1.0 - beta2.powi(t)));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));

    for (i, param) in params.iter_mut().enumerate() {
        let mut value = param.value().clone();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let zeros;
        let g = match grads[i] {
            Some(g) => g.data(),
            None => {
                zeros = vec![T::zero(); m.len()];
                &zeros
            }
        };
        for (((x, m), v), &g) in value.data_mut().iter_mut().zip(m).zip(v).zip(g) {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            let m_hat = *m * correct1;
            let v_hat = *v * correct2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        param.set_value(value);
    }
    Ok(())
}
