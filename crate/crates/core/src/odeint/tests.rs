use super::*;

fn decay(s: &[f64]) -> Result<Vec<f64>> {
    Ok(vec![-s[0]])
}

fn oscillator(s: &[f64]) -> Result<Vec<f64>> {
    Ok(vec![s[1], -s[0]])
}

fn energy(s: &[f64]) -> f64 {
    0.5 * (s[0] * s[0] + s[1] * s[1])
}

fn grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn single_rk4_step_of_exponential_growth() {
    let out = integrate(|s| Ok(vec![s[0]]), &[1.0], &[0.0, 0.1], &IntegratorConfig::rk4(0.1)).unwrap();
    // 1 + h + h^2/2 + h^3/6 + h^4/24 with h = 0.1.
    let expected = 1.0 + 0.1 + 0.005 + 0.001 / 6.0 + 0.0001 / 24.0;
    assert!((out[1][0] - expected).abs() < 1e-15);
    assert!((out[1][0] - 1.105_170_833).abs() < 1e-9);
}

#[test]
fn zero_field_keeps_state() {
    for cfg in [IntegratorConfig::rk4(0.1), IntegratorConfig::rk45()] {
        let out = integrate(|_| Ok(vec![0.0, 0.0]), &[2.0, -3.0], &grid(5.0, 11), &cfg).unwrap();
        assert!(out.iter().all(|s| s == &vec![2.0, -3.0]));
    }
}

#[test]
fn rk4_global_error_is_fourth_order() {
    let err = |dt: f64| {
        let out = integrate(decay, &[1.0], &[0.0, 1.0], &IntegratorConfig::rk4(dt)).unwrap();
        (out[1][0] - (-1.0f64).exp()).abs()
    };
    let dts = [0.1, 0.05, 0.025];
    let errs: Vec<f64> = dts.iter().map(|&d| err(d)).collect();
    for i in 0..2 {
        let slope = (errs[i] / errs[i + 1]).ln() / (dts[i] / dts[i + 1]).ln();
        assert!((slope - 4.0).abs() < 0.2, "slope {slope}");
    }
}

#[test]
fn rk4_energy_drift_shrinks_sixteenfold() {
    let drift = |dt: f64| {
        let out = integrate(oscillator, &[1.0, 0.0], &[0.0, 10.0], &IntegratorConfig::rk4(dt)).unwrap();
        (energy(&out[1]) - 0.5).abs()
    };
    // Fourth order guarantees at least a 16x reduction; for this linear
    // system the energy error actually falls by about 32x.
    let ratio = drift(0.1) / drift(0.05);
    assert!(ratio > 16.0 * 0.9 && ratio < 40.0, "ratio {ratio}");
}

#[test]
fn rk4_interpolates_between_steps() {
    // Linear field: RK4 is exact, so interpolation of a line is exact too.
    let out = integrate(|_| Ok(vec![2.0]), &[0.0], &[0.0, 0.03, 0.1, 0.25], &IntegratorConfig::rk4(0.1)).unwrap();
    let want = [0.0, 0.06, 0.2, 0.5];
    for (s, w) in out.iter().zip(want) {
        assert!((s[0] - w).abs() < 1e-14);
    }
}

#[test]
fn rk45_conserves_oscillator_energy_over_a_period() {
    let t = grid(2.0 * std::f64::consts::PI, 30);
    let out = integrate(oscillator, &[1.0, 0.0], &t, &IntegratorConfig::rk45()).unwrap();
    assert_eq!(out.len(), 30);
    for s in &out {
        assert!((energy(s) - 0.5).abs() <= 1e-8);
    }
    assert!((out[29][0] - 1.0).abs() < 1e-8 && out[29][1].abs() < 1e-8);
}

#[test]
fn rk45_matches_exact_decay() {
    let t = grid(3.0, 7);
    let out = integrate(decay, &[2.0], &t, &IntegratorConfig::rk45()).unwrap();
    for (ti, s) in t.iter().zip(&out) {
        assert!((s[0] - 2.0 * (-ti).exp()).abs() < 1e-8);
    }
}

#[test]
fn blowup_reports_partial_results() {
    // y' = y^2 from y = 1 blows up at t = 1.
    let t = grid(2.0, 21);
    for cfg in [IntegratorConfig::rk4(0.01), IntegratorConfig::rk45()] {
        let sol = integrate_partial(|s| Ok(vec![s[0] * s[0]]), &[1.0], &t, &cfg).unwrap();
        let at = sol.blowup.expect("must blow up");
        assert!(at > 0.9 && at < 1.2, "blow-up at {at}");
        assert!(sol.states.len() >= 9 && sol.states.len() <= 11);
        assert!(sol.states.iter().all(|s| s[0].is_finite()));
        assert!(matches!(
            integrate(|s| Ok(vec![s[0] * s[0]]), &[1.0], &t, &cfg),
            Err(Error::Overflow { .. })
        ));
    }
}

#[test]
fn non_finite_field_error_counts_as_blowup() {
    let sol = integrate_partial(
        |s| if s[0] > 0.5 { Err(Error::NonFinite("field".into())) } else { Ok(vec![1.0]) },
        &[0.0],
        &grid(1.0, 11),
        &IntegratorConfig::rk4(0.1),
    )
    .unwrap();
    assert!(sol.blowup.is_some());
}

#[test]
fn max_steps_and_bad_input() {
    let mut cfg = IntegratorConfig::rk4(0.01);
    cfg.max_steps = 5;
    assert!(matches!(
        integrate(decay, &[1.0], &[0.0, 1.0], &cfg),
        Err(Error::MaxStepsExceeded { .. })
    ));
    assert!(integrate(decay, &[1.0], &[0.0, 0.0], &IntegratorConfig::rk4(0.1)).is_err());
    assert!(integrate(decay, &[1.0], &[0.0, 1.0], &IntegratorConfig::rk4(0.0)).is_err());
    assert!(integrate(|_| Ok(vec![1.0, 2.0]), &[1.0], &[0.0, 1.0], &IntegratorConfig::rk4(0.1)).is_err());
}
