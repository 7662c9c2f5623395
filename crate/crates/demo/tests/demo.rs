use srh_demo::{cost_curve, expected_disparity, soft_argmin_weights, RdsScene};

#[test]
fn scene_buffers_have_image_size() {
    let s = RdsScene::generate(3, 40, 24, 12, 2, 1).unwrap();
    let n = 4 * 40 * 24;
    assert_eq!(s.left_rgba().len(), n);
    assert_eq!(s.right_rgba().len(), n);
    assert_eq!(s.disparity_rgba().len(), n);
    assert_eq!(s.residual_rgba(3).len(), n);
    assert!(s.left_rgba().chunks(4).all(|p| p[3] == 255));
    assert!(RdsScene::generate(0, 8, 8, 1, 1, 0).is_err());
}

#[test]
fn matching_shift_has_zero_residual() {
    let s = RdsScene::generate(5, 64, 32, 16, 3, 0).unwrap();
    let hits: Vec<usize> = (0..16).filter(|&d| s.matched_residual(d) >= 0.0).collect();
    assert!(!hits.is_empty());
    for d in hits {
        assert!(s.matched_residual(d).abs() < 1e-6, "d={d}");
    }
}

#[test]
fn soft_argmin_follows_the_valley() {
    let costs = cost_curve(16, 6.0, 3.0, 0.0, f64::INFINITY);
    let w = soft_argmin_weights(&costs);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((expected_disparity(&costs).unwrap() - 6.0).abs() < 0.05);
    let est: f64 = w.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    assert!((est - expected_disparity(&costs).unwrap()).abs() < 1e-12);

    // Two mirror-image valleys of equal depth put the estimate halfway.
    let two = cost_curve(16, 3.0, 5.0, 12.0, 0.0);
    assert!((expected_disparity(&two).unwrap() - 7.5).abs() < 1e-9);
    assert!(expected_disparity(&[]).is_err());
}
