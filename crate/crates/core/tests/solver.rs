use sdde_core::solver::{simulate_ensemble, simulate_with_path, History, Space, TrajectoryConfig};
use sdde_core::{FeedbackFn, JumpLaw, ModelSpec, NoisePath, NoiseSpec};

#[test]
fn feedback_free_equation_is_drift_plus_scaled_noise() {
    // With r = 0: Y(t) = y0 + (a - γ)t + b L(t), a = -b²σ²/2.
    let (gamma, b, y0) = (0.3, 0.7, 0.25);
    let model = ModelSpec::constant(gamma, 0.0, 1.0, FeedbackFn::mackey_glass(2.0, 0), b);
    for noise in [
        NoiseSpec::brownian(1.3),
        NoiseSpec::jump_diffusion(0.5, 2.0, 1.0, JumpLaw::Uniform),
    ] {
        let cfg = TrajectoryConfig::for_model(&model, 20.0)
            .with_dt(1e-3)
            .with_space(Space::Transformed)
            .with_seed(11);
        let path = NoisePath::generate(11, &noise, cfg.dt, cfg.steps()).unwrap();
        let tr = simulate_with_path(&model, &noise, &History::Constant(y0), &cfg, &path).unwrap();
        let a = -b * b * noise.sigma * noise.sigma / 2.0;
        let l = path.cumulative();
        assert_eq!(tr.values.len(), l.len());
        for k in (0..l.len()).step_by(997) {
            let t = k as f64 * cfg.dt;
            let exact = y0 + (a - gamma) * t + b * l[k];
            assert!((tr.values[k] - exact).abs() < 1e-9, "t = {t}: {} vs {exact}", tr.values[k]);
        }
    }
}

#[test]
fn equilibrium_history_is_preserved_without_noise() {
    let model = ModelSpec::constant(5.0, 10.0, 1.0, FeedbackFn::mackey_glass(8.0, 1), 0.0);
    let cfg = TrajectoryConfig::for_model(&model, 10.0).with_space(Space::Transformed);
    let trs = simulate_ensemble(&model, &NoiseSpec::brownian(0.0), &History::Constant(0.0), &cfg, 1, Some(1)).unwrap();
    assert!(trs[0].values.iter().all(|&y| y == 0.0));
}

#[test]
fn original_space_is_exponential_of_log_space() {
    let model = ModelSpec::constant(5.0, 10.0, 1.0, FeedbackFn::mackey_glass(6.0, 1), 0.1);
    let noise = NoiseSpec::brownian(1.0);
    let base = TrajectoryConfig::for_model(&model, 5.0).with_seed(3);
    let y = simulate_ensemble(&model, &noise, &History::Constant(0.5), &base.clone().with_space(Space::Transformed), 2, Some(2)).unwrap();
    let x = simulate_ensemble(&model, &noise, &History::Constant(0.5), &base.with_space(Space::Original), 2, Some(1)).unwrap();
    for (ty, tx) in y.iter().zip(&x) {
        for (a, b) in ty.values.iter().zip(&tx.values) {
            assert_eq!(a.exp(), *b);
        }
    }
}

#[test]
fn ensemble_streams_differ_and_repeat() {
    let model = ModelSpec::constant(5.0, 10.0, 1.0, FeedbackFn::mackey_glass(6.0, 1), 0.1);
    let noise = NoiseSpec::jump_diffusion(1.0, 1.0, 0.5, JumpLaw::Uniform);
    let cfg = TrajectoryConfig::for_model(&model, 3.0).with_seed(5);
    let a = simulate_ensemble(&model, &noise, &History::Constant(0.5), &cfg, 4, Some(1)).unwrap();
    let b = simulate_ensemble(&model, &noise, &History::Constant(0.5), &cfg, 4, Some(3)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].values, a[1].values);
}
