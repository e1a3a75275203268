use pose2motion::autodiff::*;

fn store(v: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.add("p", Array::from_vec(vec![v]));
    s
}

#[test]
fn zero_gradient_leaves_params() {
    let mut p = store(0.25);
    let mut st = AdamState::new(AdamConfig::default(), &p);
    st.step(&mut p, &[Array::from_vec(vec![0.0])]).unwrap();
    assert_eq!(p.values()[0].item(), 0.25);
    assert_eq!(st.step, 1);
}

#[test]
fn constant_gradient_moves_against_sign() {
    let mut p = store(0.0);
    let mut st = AdamState::new(AdamConfig { lr: 0.01, ..Default::default() }, &p);
    for _ in 0..50 {
        st.step(&mut p, &[Array::from_vec(vec![3.0])]).unwrap();
    }
    assert!(p.values()[0].item() < -0.4);
}

#[test]
fn single_step_matches_closed_form() {
    // m = 0.5, v = 0.1 after one step; corrected m̂ = 1, v̂ = 1.
    let cfg = AdamConfig { lr: 0.1, beta1: 0.5, beta2: 0.9, eps: 1e-8 };
    let mut p = store(1.0);
    let mut st = AdamState::new(cfg, &p);
    st.step(&mut p, &[Array::from_vec(vec![1.0])]).unwrap();
    let m_hat = 0.5 / (1.0 - 0.5);
    let v_hat = 0.1 / (1.0 - 0.9);
    let expected = 1.0 - 0.1 * m_hat / (f64::sqrt(v_hat) + 1e-8);
    assert!((p.values()[0].item() - expected).abs() < 1e-15);
    assert!((p.values()[0].item() - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
}

#[test]
fn shape_mismatch_is_reported() {
    let mut p = store(0.0);
    let mut st = AdamState::new(AdamConfig::default(), &p);
    let err = st.step(&mut p, &[Array::from_vec(vec![1.0, 2.0])]).unwrap_err();
    assert!(matches!(err, DiffError::ShapeMismatch { .. }));
}
