use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srh_core::cost::{build_cost_map, cost_sequence, warp_features, DisparityRange};
use srh_core::features::{FeatureConfig, FeatureExtractor, FeatureMap, ImagePair};
use srh_core::gradcheck::random_tensor;
use srh_core::tensor::memory;
use srh_core::{no_grad, Tensor, Var};

fn fmap(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
    FeatureMap {
        values: Var::constant(random_tensor(&[1, c, h, w], &mut ChaCha8Rng::seed_from_u64(seed))),
        downsample: 4,
    }
}

fn at(t: &Tensor<f64>, c: usize, y: usize, u: usize) -> f64 {
    let s = t.shape();
    t.data()[((c * s[2]) + y) * s[3] + u]
}

#[test]
fn zero_level_is_identity_and_full_width_is_empty() {
    let r = fmap(4, 3, 10, 1);
    assert_eq!(warp_features(&r, 0).unwrap().value().data(), r.values.value().data());
    assert!(warp_features(&r, 10).unwrap().value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn impulse_moves_by_the_level() {
    let (h, w, u0) = (3, 12, 4);
    let mut t = Tensor::zeros(&[1, 2, h, w]);
    t.data_mut()[(h + 1) * w + u0] = 1.0; // channel 1, row 1
    let r = FeatureMap { values: Var::constant(t), downsample: 4 };
    for i in 0..w {
        let out = warp_features(&r, i).unwrap();
        for c in 0..2 {
            for y in 0..h {
                for u in 0..w {
                    let want = if c == 1 && y == 1 && u == u0 + i { 1.0 } else { 0.0 };
                    assert_eq!(at(out.value(), c, y, u), want, "i={i} c={c} y={y} u={u}");
                }
            }
        }
    }
}

#[test]
fn cost_map_layout() {
    let l = fmap(32, 4, 8, 2);
    let r = fmap(32, 4, 8, 3);
    for i in 0..8 {
        let m = build_cost_map(&l, &r, i).unwrap();
        assert_eq!(m.values.shape(), &[1, 64, 4, 8]);
        let n = l.values.value().numel();
        assert_eq!(&m.values.value().data()[..n], l.values.value().data());
        // Columns left of the shift in the right block are exactly zero.
        for c in 32..64 {
            for y in 0..4 {
                for u in 0..i {
                    assert_eq!(at(m.values.value(), c, y, u), 0.0);
                }
            }
        }
    }
    assert!(build_cost_map(&l, &fmap(32, 4, 9, 3), 0).is_err());
}

#[test]
fn identical_views_give_matching_blocks_at_zero() {
    let fx = FeatureExtractor::<f64>::new(
        FeatureConfig {
            stem_channels: 4,
            trunk_channels: 8,
            feature_channels: 8,
            ..FeatureConfig::default()
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let img = random_tensor(&[1, 3, 16, 32], &mut ChaCha8Rng::seed_from_u64(1));
    let (l, r) = no_grad(|| fx.extract_features(&ImagePair::new(img.clone(), img).unwrap())).unwrap();
    let m = build_cost_map(&l, &r, 0).unwrap();
    let half = m.values.value().numel() / 2;
    let d = m.values.value().data();
    assert_eq!(&d[..half], &d[half..]);
}

#[test]
fn level_counts() {
    assert_eq!(DisparityRange::new(192, 4).unwrap().levels, 48);
    assert_eq!(DisparityRange::with_levels(192, 4, 64).unwrap().levels, 64);
    let r = DisparityRange::new(4, 4).unwrap();
    assert_eq!(r.levels, 1);
    let (l, rt) = (fmap(2, 2, 4, 1), fmap(2, 2, 4, 2));
    let maps: Vec<_> = cost_sequence(&l, &rt, &r).unwrap().collect();
    assert_eq!(maps.len(), 1);
    assert_eq!(maps[0].as_ref().unwrap().level, 0);
}

#[test]
fn stream_equals_eager_construction() {
    let (l, r) = (fmap(6, 5, 20, 4), fmap(6, 5, 20, 5));
    let range = DisparityRange::new(64, 4).unwrap();
    let seq = cost_sequence(&l, &r, &range).unwrap();
    assert_eq!(seq.len(), 16);
    let streamed: Vec<_> = seq.map(|m| m.unwrap()).collect();
    for (i, m) in streamed.iter().enumerate() {
        assert_eq!(m.level, i);
        let eager = build_cost_map(&l, &r, i).unwrap();
        assert_eq!(m.values.value().data(), eager.values.value().data());
    }
}

#[test]
fn traversal_memory_does_not_grow_with_levels() {
    let (l, r) = (fmap(8, 8, 64, 6), fmap(8, 8, 64, 7));
    let map_bytes = build_cost_map(&l, &r, 0).unwrap().values.value().nbytes() as u64;
    let peak_for = |levels: usize| {
        let range = DisparityRange::with_levels(levels * 4, 4, levels).unwrap();
        let (_, peak) = memory::measure_peak(|| {
            for m in cost_sequence(&l, &r, &range).unwrap() {
                let m = m.unwrap();
                assert_eq!(m.values.shape()[1], 16);
            }
        });
        peak
    };
    let (p2, p32) = (peak_for(2), peak_for(32));
    assert_eq!(p2, p32);
    // One map plus the shifted right block it is assembled from.
    assert!(p32 <= map_bytes + map_bytes / 2, "peak {p32} vs map {map_bytes}");
}
