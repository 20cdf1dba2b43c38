use proptest::prelude::*;
use sdde_core::analysis::{
    characteristic_residual, delay_equation_roots, hopf_threshold, lambert_w, leading_root_crossing, Complex64,
};
use sdde_core::{FeedbackFn, ModelSpec};

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m).signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

proptest! {
    #[test]
    fn lambert_branches_satisfy_defining_equation(
        re in -20.0f64..20.0,
        im in -20.0f64..20.0,
        k in -4i64..=4,
    ) {
        let z = Complex64::new(re, im);
        prop_assume!(z.norm() > 1e-6);
        let w = lambert_w(k, z).unwrap();
        let back = w * w.exp();
        prop_assert!((back - z).norm() <= 1e-10 * (1.0 + z.norm()), "k={k} z={z} w={w}");
    }

    #[test]
    fn leading_root_matches_real_bisection_for_positive_gain(
        gamma in 0.1f64..10.0,
        c in 0.01f64..10.0,
        tau in 0.05f64..3.0,
    ) {
        // For c > 0 the leading root is the unique real solution of λ + γ = c e^{-λτ}.
        let g = |l: f64| l + gamma - c * (-l * tau).exp();
        let real = bisect(g, -gamma - 1.0, c + 1.0);
        let roots = delay_equation_roots(gamma, c, tau, 4).unwrap();
        prop_assert!(roots[0].im.abs() < 1e-9);
        prop_assert!((roots[0].re - real).abs() < 1e-9 * (1.0 + real.abs()));
        for r in &roots {
            prop_assert!(characteristic_residual(*r, gamma, c, tau).norm() < 1e-9 * (1.0 + r.norm() + c));
            prop_assert!(r.re <= roots[0].re + 1e-12);
        }
    }
}

/// Purely imaginary root iω of λ + γ = c e^{-λτ} for c < -γ < 0.
fn crossing_oracle(gamma: f64, c: f64) -> f64 {
    let omega = (c * c - gamma * gamma).sqrt();
    (gamma / c).acos() / omega
}

#[test]
fn hopf_threshold_matches_imaginary_axis_crossing() {
    for (gamma, r, p) in [(5.0, 10.0, 8.0), (1.0, 2.0, 6.0), (2.0, 5.0, 10.0), (0.5, 3.0, 4.5)] {
        let x_star = (r / gamma - 1.0f64).powf(1.0 / p);
        let f = FeedbackFn::mackey_glass(p, 1);
        let c = r * f.derivative(x_star);
        let oracle = crossing_oracle(gamma, c);
        let tau0 = hopf_threshold(gamma, r, p).unwrap().unwrap();
        assert!((tau0 - oracle).abs() < 1e-12 * oracle, "{gamma} {r} {p}: {tau0} vs {oracle}");
        let crossing = leading_root_crossing(gamma, c, 0.2 * oracle, 5.0 * oracle).unwrap();
        assert!((crossing - oracle).abs() < 1e-9, "{crossing} vs {oracle}");
    }
}

#[test]
fn hopf_threshold_absent_when_equilibrium_is_always_stable() {
    // γ/r ≥ (p-2)/p.
    assert_eq!(hopf_threshold(5.0, 6.0, 4.0).unwrap(), None);
    assert_eq!(hopf_threshold(5.0, 4.0, 8.0).unwrap(), None);
}

#[test]
fn leading_root_sign_tracks_delay_for_figure_model() {
    let model = ModelSpec::constant(5.0, 10.0, 1.0, FeedbackFn::mackey_glass(8.0, 1), 0.0);
    let c = 10.0 * model.feedback.derivative(1.0);
    assert!((c + 15.0).abs() < 1e-12);
    let tau0 = crossing_oracle(5.0, c);
    assert!((tau0 - 0.1351).abs() < 1e-4);
    for (tau, unstable) in [(0.5 * tau0, false), (0.9 * tau0, false), (1.1 * tau0, true), (1.0, true)] {
        let lead = delay_equation_roots(5.0, c, tau, 3).unwrap()[0];
        assert_eq!(lead.re > 0.0, unstable, "tau = {tau}, λ = {lead}");
    }
}

#[test]
fn steady_states_of_mackey_glass() {
    // x* solves γ = r f(x)/x, i.e. x*^p = r/γ - 1.
    let states = sdde_core::analysis::steady_states(5.0, 10.0, &FeedbackFn::mackey_glass(8.0, 1));
    assert!(states.iter().any(|&x| x == 0.0));
    let pos: Vec<f64> = states.into_iter().filter(|&x| x > 0.0).collect();
    assert_eq!(pos.len(), 1);
    assert!((pos[0] - 1.0).abs() < 1e-12);
}
