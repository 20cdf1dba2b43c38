use proptest::prelude::*;
use sdde_core::bounds::{
    bound_reverse_sup_brownian, bound_reverse_sup_levy, bound_window_sup_brownian, bound_window_sup_levy,
    sample_statistic, Statistic, SyntheticProcess,
};
use sdde_core::{BoundKind, JumpLaw, NoiseSpec, TailBoundParams};
use statrs::distribution::{ContinuousCDF, Normal};

const KINDS: [BoundKind; 5] = [
    BoundKind::ReverseSupBrownian,
    BoundKind::WindowSupBrownian,
    BoundKind::ReverseSupLevy,
    BoundKind::WindowSupLevy,
    BoundKind::Composite,
];

fn params(alpha: f64, beta: f64, lambda: f64, zeta: f64) -> TailBoundParams {
    TailBoundParams::from_noise(alpha, beta, &NoiseSpec::jump_diffusion(1.0, lambda, zeta, JumpLaw::Uniform))
}

proptest! {
    #[test]
    fn bounds_are_non_increasing_and_vanish(
        alpha in 0.5f64..5.0,
        beta in 0.1f64..2.0,
        lambda in 0.0f64..2.0,
        zeta in 0.01f64..1.0,
        r1 in 0.0f64..500.0,
        dr in 0.0f64..500.0,
    ) {
        let p = params(alpha, beta, lambda, zeta);
        prop_assume!(alpha > p.jump_load());
        for kind in KINDS {
            let a = kind.evaluate(&p, r1).unwrap().total;
            let b = kind.evaluate(&p, r1 + dr).unwrap().total;
            prop_assert!(b <= a * (1.0 + 1e-12), "{kind:?}: {a} -> {b}");
            let far = kind.threshold(&p, 1e-8).unwrap();
            prop_assert!(kind.evaluate(&p, far).unwrap().total <= 1e-8);
        }
    }
}

#[test]
fn levy_bounds_without_jumps_keep_only_the_brownian_half() {
    // λ_N = 0: the Brownian bound at (α/2, βσ, R/2), and the window bound with C = 1.
    for (alpha, beta) in [(1.0, 1.0), (3.0, 0.5), (0.2, 2.0)] {
        let p = TailBoundParams::brownian(alpha, beta);
        assert_eq!(p.window_constant(), 1.0);
        let b2 = beta * beta;
        for r in [0.0, 1.0, 10.0, 100.0, 1000.0] {
            let oracle = 4.0 * (-r * r / (256.0 * b2)).exp()
                + 4.0 * (-alpha * r / (256.0 * b2)).exp() / -(-alpha * alpha / (512.0 * b2)).exp_m1();
            let lv = bound_reverse_sup_levy(&p, r).unwrap();
            assert_eq!(lv.terms[2], 0.0);
            assert!((lv.total - oracle).abs() <= 1e-12 * oracle.max(1e-300), "{alpha} {beta} {r}: {} vs {oracle}", lv.total);
            assert!(lv.total >= bound_reverse_sup_brownian(alpha, beta, r).unwrap() * (1.0 - 1e-12));
            let window = 2.0 * (-r * r / (64.0 * b2)).exp() + (-r).exp();
            let lw = bound_window_sup_levy(&p, r).unwrap().total;
            assert!((lw - window).abs() <= 1e-14 * window.max(1e-300), "{lw} vs {window}");
            assert!(lw >= bound_window_sup_brownian(beta, 1.0, r).unwrap());
        }
    }
}

#[test]
fn window_bound_stays_finite_when_the_constant_overflows() {
    let p = params(3.5, 2.0, 1.0, 0.95);
    assert!(p.window_constant().is_infinite());
    for kind in [BoundKind::WindowSupLevy, BoundKind::Composite] {
        let far = kind.threshold(&p, 1e-8).unwrap();
        let v = kind.evaluate(&p, far).unwrap().total;
        assert!(v <= 1e-8, "{kind:?}: {v}");
        assert!(kind.evaluate(&p, 0.5 * far).unwrap().total > 1e-8);
    }
}

#[test]
fn brownian_closed_forms() {
    let v = bound_reverse_sup_brownian(1.0, 1.0, 0.0).unwrap();
    let oracle = 4.0 + 4.0 / (1.0 - (-1.0f64 / 128.0).exp());
    assert!((v - oracle).abs() < 1e-12 * oracle);
    let w = bound_window_sup_brownian(2.0, 3.0, 6.0).unwrap();
    assert!((w - 2.0 * (-36.0f64 / 192.0).exp()).abs() < 1e-15);
}

#[test]
fn noiseless_synthetic_process_has_no_tail() {
    let process = SyntheticProcess {
        alpha: 1.0,
        beta: 0.0,
        noise: NoiseSpec::brownian(1.0),
    };
    for i in 0..50 {
        assert_eq!(sample_statistic(&process, Statistic::ReverseSup { horizon: 5.0 }, 1, i).unwrap(), 0.0);
        assert_eq!(sample_statistic(&process, Statistic::WindowSup { length: 1.0 }, 1, i).unwrap(), 0.0);
    }
}

#[test]
fn window_sup_sampler_matches_reflection_principle() {
    // P(sup_{[0,T]} βW ≥ R) = 2(1 - Φ(R/(β√T))).
    let (beta, t) = (1.5, 2.0);
    let process = SyntheticProcess {
        alpha: 0.0,
        beta,
        noise: NoiseSpec::brownian(1.0),
    };
    let n = 20_000u64;
    let samples: Vec<f64> = (0..n)
        .map(|i| sample_statistic(&process, Statistic::WindowSup { length: t }, 42, i).unwrap())
        .collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    for r in [0.5, 1.5, 3.0, 5.0] {
        let p = 2.0 * (1.0 - normal.cdf(r / (beta * t.sqrt())));
        let freq = samples.iter().filter(|&&s| s >= r).count() as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se + 1e-4, "R = {r}: {freq} vs {p}");
        assert!(bound_window_sup_brownian(beta, t, r).unwrap() >= p);
    }
}

#[test]
fn every_alpha_above_the_jump_load_is_admissible() {
    let p = params(1.0, 1.0, 1.0, 0.5);
    for alpha in [0.5000001, 0.501, 0.504, 0.6, 1.0] {
        let q = TailBoundParams { alpha, ..p.clone() };
        for kind in [BoundKind::ReverseSupLevy, BoundKind::Composite] {
            let v = kind.evaluate(&q, 10.0).unwrap().total;
            assert!(v.is_finite() && v > 0.0, "{alpha}: {v}");
        }
    }
}

#[test]
fn jump_condition_is_enforced() {
    let p = params(0.4, 1.0, 1.0, 0.5);
    assert!(p.alpha <= p.jump_load());
    assert!(bound_reverse_sup_levy(&p, 10.0).is_err());
}
