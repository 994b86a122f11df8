use deltadiff_web::{forward_strips_impl, oracle_rollout_impl, schedule_curve_impl};

#[test]
fn schedule_curve_matches_default_values() {
    let etas = schedule_curve_impl(4, 0.01, 0.99, 1.0).unwrap();
    let want = [0.01, 0.046262, 0.214014, 0.99];
    for (g, w) in etas.iter().zip(want) {
        assert!((g - w).abs() < 1e-5);
    }
    assert!(schedule_curve_impl(4, 0.5, 0.4, 1.0).unwrap_err().contains("eta"));
}

#[test]
fn forward_strips_shape_and_kappa_zero() {
    let s = forward_strips_impl(32, 1, 0.0, 9, 4, 0.01, 0.99, 1.0).unwrap();
    assert_eq!((s.width(), s.height()), (32 * 6, 64));
    assert_eq!(s.labels(), "0,1,2,3,4,lr");
    assert_eq!(s.etas().len(), 6);
    let rgba = s.rgba();
    assert_eq!(rgba.len(), s.width() * s.height() * 4);
    // with kappa = 0 the noisy row repeats the deterministic row
    let row = s.width() * 4 * 32;
    assert_eq!(rgba[..row], rgba[row..]);

    let noisy = forward_strips_impl(32, 1, 0.5, 9, 4, 0.01, 0.99, 1.0).unwrap().rgba();
    assert_eq!(noisy[..row], rgba[..row]);
    assert_ne!(noisy[row..], rgba[row..]);
    assert_eq!(noisy, forward_strips_impl(32, 1, 0.5, 9, 4, 0.01, 0.99, 1.0).unwrap().rgba());
}

#[test]
fn oracle_rollout_reaches_hr() {
    let s = oracle_rollout_impl(32, 3, 4, 0.01, 0.99, 1.0).unwrap();
    assert_eq!(s.labels(), "4,3,2,1,0");
    let p = s.psnr();
    assert_eq!(p.len(), 5);
    assert!(p[4] > 100.0, "{p:?}");
    assert!(p.windows(2).all(|w| w[0] < w[1]), "{p:?}");
}

#[test]
fn invalid_inputs_are_reported() {
    assert!(forward_strips_impl(30, 0, 0.0, 0, 4, 0.01, 0.99, 1.0).is_err());
    assert!(forward_strips_impl(32, 0, -1.0, 0, 4, 0.01, 0.99, 1.0).is_err());
    assert!(oracle_rollout_impl(32, 0, 1, 0.01, 0.99, 1.0).is_err());
}
