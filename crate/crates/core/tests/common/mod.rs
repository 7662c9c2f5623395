#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srh_core::aggregate::{gru_step, ConvGruCell};
use srh_core::features::SpatialPyramid;
use srh_core::gradcheck::{check_op, random_tensor, GradCheck};
use srh_core::head::{smooth_l1, soft_argmin_batch, total_loss, GroundTruth, LossWeights};
use srh_core::nn::Module;
use srh_core::ops;
use srh_core::{Result, Tensor, Var};

pub type OpFn = Box<dyn Fn(&[Var<f64>]) -> Result<Var<f64>>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub op: OpFn,
}

fn rand_inputs(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    shapes.iter().map(|s| random_tensor(s, rng)).collect()
}

fn case(name: &'static str, inputs: Vec<Tensor<f64>>, op: impl Fn(&[Var<f64>]) -> Result<Var<f64>> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        op: Box::new(op),
    }
}

/// One instance of every differentiable operation, with inputs drawn from
/// `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = vec![
        case("conv2d", rand_inputs(r, &[&[2, 4, 8, 8], &[6, 4, 3, 3], &[6]]), |v| {
            ops::conv2d(&v[0], &v[1], Some(&v[2]), 1, 1)
        }),
        case("conv2d_stride2", rand_inputs(r, &[&[1, 3, 7, 6], &[2, 3, 3, 3], &[2]]), |v| {
            ops::conv2d(&v[0], &v[1], Some(&v[2]), 2, 1)
        }),
        case("conv_transpose2d", rand_inputs(r, &[&[1, 3, 3, 4], &[3, 2, 4, 4], &[2]]), |v| {
            ops::conv_transpose2d(&v[0], &v[1], Some(&v[2]), 2, 1)
        }),
        case("avg_pool2d", rand_inputs(r, &[&[1, 2, 6, 8]]), |v| ops::avg_pool2d(&v[0], (2, 3), (2, 3))),
        case("bilinear_resize2d", rand_inputs(r, &[&[1, 2, 5, 7]]), |v| {
            ops::bilinear_resize2d(&v[0], 10, 14, true)
        }),
        case("bilinear_resize2d_centres", rand_inputs(r, &[&[1, 2, 2, 3]]), |v| {
            ops::bilinear_resize2d(&v[0], 5, 7, false)
        }),
        case("linear_resample_axis", rand_inputs(r, &[&[2, 4, 3]]), |v| ops::linear_resample_axis(&v[0], 1, 11)),
        case("sigmoid", rand_inputs(r, &[&[3, 5]]), |v| Ok(ops::sigmoid(&v[0]))),
        case("tanh", rand_inputs(r, &[&[3, 5]]), |v| Ok(ops::tanh(&v[0]))),
        case("relu", rand_inputs(r, &[&[3, 5]]), |v| Ok(ops::relu(&v[0]))),
        case("softmax_axis", rand_inputs(r, &[&[3, 5]]), |v| ops::softmax_axis(&v[0], 1)),
        case("softmax_axis_0", rand_inputs(r, &[&[4, 2, 3]]), |v| ops::softmax_axis(&v[0], 0)),
        case("concat", rand_inputs(r, &[&[1, 2, 3, 3], &[1, 3, 3, 3]]), |v| ops::concat(&[&v[0], &v[1]], 1)),
        case("narrow", rand_inputs(r, &[&[2, 5, 3]]), |v| ops::narrow(&v[0], 1, 1, 3)),
        case("reshape", rand_inputs(r, &[&[2, 6]]), |v| ops::reshape(&v[0], &[3, 4])),
        case("shift_columns", rand_inputs(r, &[&[1, 2, 3, 6]]), |v| ops::shift_columns(&v[0], 2)),
        case("add_broadcast", rand_inputs(r, &[&[2, 3, 4], &[3, 4]]), |v| ops::add(&v[0], &v[1])),
        case("sub", rand_inputs(r, &[&[2, 3], &[2, 3]]), |v| ops::sub(&v[0], &v[1])),
        case("mul_broadcast", rand_inputs(r, &[&[4], &[3, 4]]), |v| ops::mul(&v[0], &v[1])),
        case("scale", rand_inputs(r, &[&[2, 3]]), |v| Ok(ops::scale(&v[0], -1.7))),
        case("rsub_scalar", rand_inputs(r, &[&[2, 3]]), |v| Ok(ops::rsub_scalar(1.0, &v[0]))),
        case("sum", rand_inputs(r, &[&[2, 3]]), |v| Ok(ops::sum(&v[0]))),
        case("mean", rand_inputs(r, &[&[2, 3]]), |v| Ok(ops::mean(&v[0]))),
        case("instance_norm2d", rand_inputs(r, &[&[1, 2, 3, 4]]), |v| ops::instance_norm2d(&v[0])),
        case("soft_argmin", rand_inputs(r, &[&[1, 8, 3, 3]]), |v| soft_argmin_batch(&v[0])),
    ];

    // Prediction errors on both sides of the smooth-L1 seam, including
    // exactly on it.
    let gt_values = random_tensor(&[1, 1, 2, 5], r).map(|x| 4.0 + 2.0 * x);
    let offsets = [1.0, -1.0, 0.999, -1.001, 0.3, 2.5, -0.2, 1.0001, -3.0, 0.0];
    let pred = Tensor::from_fn(&[1, 1, 2, 5], |i| gt_values.data()[i] + offsets[i]);
    let gt = GroundTruth::new(gt_values, 16).unwrap();
    let gt2 = gt.clone();
    cases.push(case("smooth_l1", vec![pred.clone()], move |v| smooth_l1(&v[0], &gt)));
    let other = pred.map(|p| p + 0.4);
    cases.push(case("total_loss", vec![pred, other], move |v| {
        total_loss(&v[0], &v[1], &gt2, LossWeights::default())
    }));

    // Three chained GRU steps, differentiated with respect to every input,
    // the initial state and each gate weight.
    let cell = ConvGruCell::<f64>::new("g", 4, 4, &mut ChaCha8Rng::seed_from_u64(seed + 1));
    let mut inputs = rand_inputs(r, &[&[1, 4, 6, 6], &[1, 4, 6, 6], &[1, 4, 6, 6], &[1, 4, 6, 6]]);
    inputs.extend(cell.params().iter().map(|p| p.value().clone()));
    cases.push(case("gru_3_steps", inputs, move |v| {
        let mut c = cell.clone();
        for (p, value) in c.params_mut().into_iter().zip(&v[4..]) {
            *p = srh_core::nn::Param::from_var(p.name(), value.clone());
        }
        let mut h = v[3].clone();
        for x in &v[..3] {
            h = gru_step(&c, x, &h)?;
        }
        Ok(h)
    }));

    let spp = SpatialPyramid::<f64>::new("spp", 8, 4, &mut ChaCha8Rng::seed_from_u64(seed + 2));
    cases.push(case("spp", rand_inputs(r, &[&[1, 8, 16, 16]]), move |v| spp.forward(&v[0])));
    cases
}

pub fn run_case(case: &OpCase, seed: u64) -> GradCheck {
    check_op(&case.inputs, &case.op, seed).unwrap_or_else(|e| panic!("{}: {e}", case.name))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// A copy of `module` whose parameters are the given graph nodes, in
/// `params()` order.
pub fn with_params<M: Module<f64> + Clone>(module: &M, vars: &[Var<f64>]) -> M {
    let mut m = module.clone();
    let params = m.params_mut();
    assert_eq!(params.len(), vars.len());
    for (p, v) in params.into_iter().zip(vars) {
        *p = srh_core::nn::Param::from_var(p.name(), v.clone());
    }
    m
}

pub fn param_values<M: Module<f64>>(module: &M) -> Vec<Tensor<f64>> {
    module.params().iter().map(|p| p.value().clone()).collect()
}

/// For each input tensor of the scalar function `f`, compares the analytic
/// derivative along a random direction with a central difference along the
/// same direction. Returns the relative error per input.
///
/// A relu switching state inside the difference stencil corrupts the
/// numerical side only, so a mismatch is re-measured with successively
/// smaller steps and the smallest error kept. A wrong analytic gradient does
/// not improve as the step shrinks.
pub fn directional_errors(
    point: &[Tensor<f64>],
    f: impl Fn(&[Var<f64>]) -> Result<Var<f64>>,
    seed: u64,
) -> Vec<f64> {
    use srh_core::gradcheck::{directional_derivative, relative_error, DEFAULT_STEP};
    let vars: Vec<Var<f64>> = point.iter().cloned().map(Var::parameter).collect();
    let loss = f(&vars).unwrap();
    assert_eq!(loss.value().numel(), 1, "directional check needs a scalar");
    let grads = loss.backward().unwrap();
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        srh_core::no_grad(|| {
            let vars: Vec<Var<f64>> = values.iter().cloned().map(Var::constant).collect();
            f(&vars)?.value().item()
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ec_7104);
    let mut errors = Vec::with_capacity(point.len());
    for (i, var) in vars.iter().enumerate() {
        let dir = random_tensor(point[i].shape(), &mut rng);
        let analytic = grads.get(var).map_or(0.0, |g| g.dot(&dir).unwrap());
        let directions: Vec<Tensor<f64>> = point
            .iter()
            .enumerate()
            .map(|(j, p)| if j == i { dir.clone() } else { Tensor::zeros(p.shape()) })
            .collect();
        let mut err = f64::INFINITY;
        for step in [DEFAULT_STEP, DEFAULT_STEP / 2.0, DEFAULT_STEP / 10.0, DEFAULT_STEP / 100.0] {
            let numeric = directional_derivative(&eval, point, &directions, step).unwrap();
            err = err.min(relative_error(analytic, numeric));
            if err < 1e-4 {
                break;
            }
        }
        errors.push(err);
    }
    errors
}
