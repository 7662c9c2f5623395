mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srh_core::aggregate::{
    Aggregator, AggregatorConfig, AggregatorKind, ConvGruCell, GruStateSet, Hourglass, SrhAggregator,
    StackedGruAggregator,
};
use srh_core::cost::CostMap;
use srh_core::gradcheck::random_tensor;
use srh_core::nn::Module;
use srh_core::ops;
use srh_core::{no_grad, Tensor, Var};

const COST_CH: usize = 8;

fn config(kind: AggregatorKind) -> AggregatorConfig {
    AggregatorConfig {
        kind,
        hidden_channels: 6,
        hourglass_channels: [8, 10],
    }
}

fn costs(n: usize, h: usize, w: usize, seed: u64) -> Vec<CostMap<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|level| CostMap {
            level,
            values: Var::constant(random_tensor(&[1, COST_CH, h, w], &mut rng)),
        })
        .collect()
}

fn rollout(agg: &Aggregator<f64>, maps: &[CostMap<f64>]) -> Vec<(Tensor<f64>, Tensor<f64>)> {
    let s = maps[0].values.shape();
    let mut states = agg.reset_states(s[2], s[3]).unwrap();
    no_grad(|| {
        maps.iter()
            .map(|c| {
                let (slice, next) = agg.step(c, &states).unwrap();
                states = next;
                (slice.intermediate.value().clone(), slice.output.value().clone())
            })
            .collect()
    })
}

#[test]
fn update_gate_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Var::constant(random_tensor(&[1, 3, 5, 5], &mut rng));
    let h = Var::constant(random_tensor(&[1, 4, 5, 5], &mut rng));
    let mut cell = ConvGruCell::<f64>::new("g", 3, 4, &mut rng);

    cell.update.bias.set_value(Tensor::full(&[4], -40.0));
    let s = cell.step_detailed(&x, &h).unwrap();
    assert!(s.hidden.value().max_abs_diff(h.value()).unwrap() < 1e-6);

    cell.update.bias.set_value(Tensor::full(&[4], 40.0));
    let s = cell.step_detailed(&x, &h).unwrap();
    assert!(s.hidden.value().max_abs_diff(s.candidate.value()).unwrap() < 1e-6);
}

#[test]
fn gru_rejects_mismatched_shapes() {
    let cell = ConvGruCell::<f64>::new("g", 3, 4, &mut ChaCha8Rng::seed_from_u64(0));
    let x = Var::constant(Tensor::zeros(&[1, 3, 5, 5]));
    assert!(cell.step_detailed(&x, &Var::constant(Tensor::zeros(&[1, 4, 5, 6]))).is_err());
    assert!(cell.step_detailed(&x, &Var::constant(Tensor::zeros(&[1, 3, 5, 5]))).is_err());
}

#[test]
fn hidden_state_is_a_convex_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cell = ConvGruCell::<f64>::new("g", 3, 4, &mut rng);
    let mut h = Var::constant(random_tensor(&[1, 4, 6, 6], &mut rng).map(|v| 3.0 * v));
    for _ in 0..5 {
        let x = Var::constant(random_tensor(&[1, 3, 6, 6], &mut rng).map(|v| 4.0 * v));
        let s = cell.step_detailed(&x, &h).unwrap();
        for ((&old, &cand), &new) in h.value().data().iter().zip(s.candidate.value().data()).zip(s.hidden.value().data()) {
            assert!(new >= old.min(cand) - 1e-15 && new <= old.max(cand) + 1e-15);
        }
        for g in [&s.update_gate, &s.reset_gate] {
            assert!(g.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        h = s.hidden;
    }
}

#[test]
fn hourglass_preserves_shape_and_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hg = Hourglass::<f64>::new("hg", [32, 48, 64], &mut rng);
    let x = Var::constant(random_tensor(&[1, 32, 16, 24], &mut rng));
    let half = Var::constant(Tensor::zeros(&[1, 48, 8, 12]));
    let quarter = Var::constant(Tensor::zeros(&[1, 64, 4, 6]));
    let out = hg.step(&x, &half, &quarter, None).unwrap();
    assert_eq!(out.output.shape(), &[1, 32, 16, 24]);
    assert_eq!(out.half_state.shape(), &[1, 48, 8, 12]);
    assert_eq!(out.quarter_state.shape(), &[1, 64, 4, 6]);

    // Biases start at zero.
    assert!(hg.params().iter().filter(|p| p.name().ends_with(".bias")).all(|p| p.value().max_abs() == 0.0));
    let zero = Var::constant(Tensor::zeros(&[1, 32, 16, 24]));
    let out = hg.step(&zero, &half, &quarter, None).unwrap();
    assert!(out.output.value().data().iter().all(|&v| v == 0.0));

    let odd = Var::constant(Tensor::zeros(&[1, 32, 14, 24]));
    assert!(hg
        .step(&odd, &Var::constant(Tensor::zeros(&[1, 48, 7, 12])), &Var::constant(Tensor::zeros(&[1, 64, 4, 6])), None)
        .is_err());
}

#[test]
fn reset_states_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let srh = SrhAggregator::<f64>::new(&config(AggregatorKind::Srh), COST_CH, &mut rng);
    let s = srh.reset_states(8, 12).unwrap();
    let shapes: Vec<Vec<usize>> = s.states.iter().map(|v| v.shape().to_vec()).collect();
    assert_eq!(
        shapes,
        vec![
            vec![1, 6, 8, 12],
            vec![1, 6, 8, 12],
            vec![1, 8, 4, 6],
            vec![1, 10, 2, 3],
            vec![1, 8, 4, 6],
            vec![1, 10, 2, 3],
        ]
    );
    assert!(s.states.iter().all(|v| v.value().data().iter().all(|&x| x == 0.0)));
    assert_eq!(s.snapshot(), srh.reset_states(8, 12).unwrap().snapshot());
    assert!(srh.reset_states(6, 12).is_err());

    let stacked = StackedGruAggregator::<f64>::new(&config(AggregatorKind::StackedGru), COST_CH, &mut rng);
    let s = stacked.reset_states(5, 7).unwrap();
    assert_eq!(s.len(), 3);
    assert!(s.states.iter().all(|v| v.shape() == [1, 6, 5, 7]));
}

#[test]
fn slices_match_cost_geometry_and_state_size_is_fixed() {
    for kind in [AggregatorKind::Srh, AggregatorKind::StackedGru] {
        let agg = Aggregator::<f64>::new(&config(kind), COST_CH, &mut ChaCha8Rng::seed_from_u64(5));
        let maps = costs(5, 8, 12, 6);
        let mut states = agg.reset_states(8, 12).unwrap();
        let bytes = states.nbytes();
        for c in &maps {
            let (slice, next) = no_grad(|| agg.step(c, &states)).unwrap();
            assert_eq!(slice.level, c.level);
            assert_eq!(slice.intermediate.shape(), &[1, 1, 8, 12]);
            assert_eq!(slice.output.shape(), &[1, 1, 8, 12]);
            assert_eq!(next.nbytes(), bytes);
            states = next;
        }
        let wrong = GruStateSet { states: states.states[..2].to_vec() };
        assert!(agg.step(&maps[0], &wrong).is_err());
    }
}

#[test]
fn identical_weights_give_identical_rollouts() {
    for kind in [AggregatorKind::Srh, AggregatorKind::StackedGru] {
        let a = Aggregator::<f64>::new(&config(kind), COST_CH, &mut ChaCha8Rng::seed_from_u64(7));
        let b = Aggregator::<f64>::new(&config(kind), COST_CH, &mut ChaCha8Rng::seed_from_u64(7));
        let maps = costs(4, 8, 8, 8);
        assert_eq!(rollout(&a, &maps), rollout(&b, &maps));
    }
}

#[test]
fn state_threading_is_path_independent() {
    let cfg = config(AggregatorKind::Srh);
    let srh = SrhAggregator::<f64>::new(&cfg, COST_CH, &mut ChaCha8Rng::seed_from_u64(9));
    let wrapped = Aggregator::Srh(srh.clone());
    let maps = costs(2, 8, 8, 10);

    let s0 = srh.reset_states(8, 8).unwrap();
    let (_, s1) = srh.step(&maps[0], &s0).unwrap();
    let (direct, _) = srh.step(&maps[1], &s1).unwrap();

    let via_enum = rollout(&wrapped, &maps);
    assert_eq!(direct.output.value().data(), via_enum[1].1.data());
}

#[test]
fn snapshot_replay_continues_bit_identically() {
    for kind in [AggregatorKind::Srh, AggregatorKind::StackedGru] {
        let agg = Aggregator::<f64>::new(&config(kind), COST_CH, &mut ChaCha8Rng::seed_from_u64(11));
        let maps = costs(5, 8, 8, 12);
        let full = rollout(&agg, &maps);

        let mut states = agg.reset_states(8, 8).unwrap();
        for c in &maps[..2] {
            states = no_grad(|| agg.step(c, &states)).unwrap().1;
        }
        let saved = states.snapshot();
        let mut restored = GruStateSet::from_snapshot(saved);
        for (k, c) in maps[2..].iter().enumerate() {
            let (slice, next) = no_grad(|| agg.step(c, &restored)).unwrap();
            assert_eq!(slice.output.value().data(), full[k + 2].1.data());
            assert_eq!(slice.intermediate.value().data(), full[k + 2].0.data());
            restored = next;
        }
    }
}

#[test]
fn cost_order_matters() {
    for kind in [AggregatorKind::Srh, AggregatorKind::StackedGru] {
        let agg = Aggregator::<f64>::new(&config(kind), COST_CH, &mut ChaCha8Rng::seed_from_u64(13));
        let maps = costs(4, 8, 8, 14);
        let permuted: Vec<CostMap<f64>> = [2, 0, 3, 1]
            .iter()
            .enumerate()
            .map(|(level, &k)| CostMap { level, values: maps[k].values.clone() })
            .collect();
        let a = rollout(&agg, &maps);
        let b = rollout(&agg, &permuted);
        assert!(a.last().unwrap().1.max_abs_diff(&b.last().unwrap().1).unwrap() > 1e-9);
    }
}

#[test]
fn closed_update_gates_freeze_the_stacked_baseline() {
    let mut agg = StackedGruAggregator::<f64>::new(&config(AggregatorKind::StackedGru), COST_CH, &mut ChaCha8Rng::seed_from_u64(15));
    for cell in agg.cells_mut() {
        let n = cell.hidden_channels();
        cell.update.bias.set_value(Tensor::full(&[n], -30.0));
    }
    let agg = Aggregator::StackedGru(agg);
    let outs = rollout(&agg, &costs(5, 8, 8, 16));
    for (_, o) in &outs[1..] {
        assert!(o.max_abs_diff(&outs[0].1).unwrap() < 1e-5);
    }
}

fn rollout_loss(agg: &Aggregator<f64>, maps: &[Var<f64>], proj: &[Tensor<f64>]) -> srh_core::Result<Var<f64>> {
    let s = maps[0].shape();
    let mut states = agg.reset_states(s[2], s[3])?;
    let mut total: Option<Var<f64>> = None;
    for (level, values) in maps.iter().enumerate() {
        let (slice, next) = agg.step(&CostMap { level, values: values.clone() }, &states)?;
        states = next;
        let p = Var::constant(proj[level].clone());
        let term = ops::add(
            &ops::sum(&ops::mul(&slice.intermediate, &p)?),
            &ops::sum(&ops::scale(&ops::mul(&slice.output, &p)?, 0.5)),
        )?;
        total = Some(match total {
            None => term,
            Some(t) => ops::add(&t, &term)?,
        });
    }
    Ok(total.unwrap())
}

#[test]
fn rollout_gradients_match_finite_differences() {
    for kind in [AggregatorKind::Srh, AggregatorKind::StackedGru] {
        let agg = Aggregator::<f64>::new(&config(kind), COST_CH, &mut ChaCha8Rng::seed_from_u64(17));
        let n = agg.params().len();
        let maps: Vec<Tensor<f64>> = costs(4, 8, 8, 18).into_iter().map(|c| c.values.value().clone()).collect();
        let proj: Vec<Tensor<f64>> = costs(4, 8, 8, 19)
            .into_iter()
            .map(|c| c.values.value().channels(0, 1).unwrap())
            .collect();
        let mut point = common::param_values(&agg);
        point.extend(maps);
        let errors = common::directional_errors(
            &point,
            |v| rollout_loss(&common::with_params(&agg, &v[..n]), &v[n..], &proj),
            20,
        );
        let names: Vec<String> = agg.params().iter().map(|p| p.name().to_string()).collect();
        for (i, e) in errors.iter().enumerate() {
            let name = names.get(i).map_or("cost map", String::as_str);
            assert!(*e < 1e-3, "{kind}: {name} rel error {e}");
        }
    }
}
