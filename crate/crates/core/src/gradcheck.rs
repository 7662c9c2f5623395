//! Central finite-difference checks for analytic gradients (64-bit only).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{no_grad, Var};
use crate::error::Result;
use crate::ops;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor so that gradients that are zero up to rounding do not
/// produce meaningless relative errors.
pub const REL_FLOOR: f64 = 1e-6;

/// Within one input tensor, entries smaller than this fraction of its
/// largest gradient are compared against that scale rather than their own
/// size: the difference quotient's rounding error is set by the loss value,
/// not by the entry, so tiny entries cannot be resolved to a relative bound.
pub const SCALE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, REL_FLOOR)
}

pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, element)` with the worst error.
    pub worst: (usize, usize),
}

impl GradCheck {
    fn update(&mut self, input: usize, element: usize, err: f64) {
        self.checked += 1;
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = (input, element);
        }
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Checks every element of every input of `op`.
///
/// A non-scalar output is reduced with a fixed random projection so that all
/// output elements contribute to the checked loss.
pub fn check_op<F>(inputs: &[Tensor<f64>], op: F, seed: u64) -> Result<GradCheck>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::parameter).collect();
    let out = op(&vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let projection = Var::constant(random_tensor(out.shape(), &mut rng));
    let loss = ops::sum(&ops::mul(&out, &projection)?);
    let grads = loss.backward()?;

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        no_grad(|| {
            let vars: Vec<Var<f64>> = values.iter().cloned().map(Var::constant).collect();
            let out = op(&vars)?;
            out.value().dot(projection.value())
        })
    };

    let mut report = GradCheck::default();
    let mut point: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()));
        let floor = SCALE_FLOOR * analytic.max_abs();
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            point[i].data_mut()[j] = x0 + DEFAULT_STEP;
            let plus = eval(&point)?;
            point[i].data_mut()[j] = x0 - DEFAULT_STEP;
            let minus = eval(&point)?;
            point[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * DEFAULT_STEP);
            report.update(i, j, relative_error_floored(analytic.data()[j], numeric, floor));
        }
    }
    Ok(report)
}

/// Central difference of `f` along `direction` at `point`.
pub fn directional_derivative<F>(
    f: F,
    point: &[Tensor<f64>],
    direction: &[Tensor<f64>],
    step: f64,
) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    let shifted = |sign: f64| -> Vec<Tensor<f64>> {
        point
            .iter()
            .zip(direction)
            .map(|(p, d)| p.zip_map(d, |a, b| a + sign * step * b).expect("direction shape"))
            .collect()
    };
    let plus = f(&shifted(1.0))?;
    let minus = f(&shifted(-1.0))?;
    Ok((plus - minus) / (2.0 * step))
}
