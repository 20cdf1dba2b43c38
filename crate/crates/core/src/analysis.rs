//! Deterministic structure of the noiseless equation: equilibria, the
//! characteristic roots of `λ + γ = c·e^{-λτ}`, the Hopf threshold of the
//! positive equilibrium and the stability regimes of the Mackey–Glass family.

use std::f64::consts::{E, PI};

pub use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{FeedbackFn, ModelSpec};

const MAX_ITER: usize = 100;

/// Non-negative equilibria of `-γx + r f(x) = 0`, ascending.
pub fn steady_states(gamma: f64, r: f64, f: &FeedbackFn) -> Vec<f64> {
    let mut out = Vec::new();
    if f.at_zero() == 0.0 {
        out.push(0.0);
    }
    if !(gamma > 0.0 && r > 0.0) {
        return out;
    }
    match *f {
        FeedbackFn::MackeyGlass { p, q: 1 } => {
            if r > gamma {
                out.push(((r - gamma) / gamma).powf(1.0 / p));
            }
        }
        FeedbackFn::Nicholson { p } => {
            if r > gamma {
                out.push((r / gamma).ln() / p);
            }
        }
        _ => out.extend(positive_roots(|x| -gamma * x + r * f.eval_unchecked(x), r * f.sup_bound() / gamma)),
    }
    out
}

/// Sign changes on a fine grid of `(0, hi]`, refined by bisection.
fn positive_roots(h: impl Fn(f64) -> f64, hi: f64) -> Vec<f64> {
    let n = 20_000;
    let hi = hi * 1.01 + 1e-9;
    let mut roots = Vec::new();
    let mut a = hi * 1e-9;
    let mut ha = h(a);
    for i in 1..=n {
        let b = hi * i as f64 / n as f64;
        let hb = h(b);
        if hb == 0.0 {
            roots.push(b);
        } else if ha.signum() != hb.signum() && ha != 0.0 {
            let (mut lo, mut up) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (lo + up);
                if h(mid).signum() == h(lo).signum() {
                    lo = mid;
                } else {
                    up = mid;
                }
                if up - lo <= 1e-16 * up {
                    break;
                }
            }
            roots.push(0.5 * (lo + up));
        }
        a = b;
        ha = hb;
    }
    roots
}

/// Branch of the Lambert function whose range contains `w`.
fn branch_of(w: Complex64) -> i64 {
    let (x, y) = (w.re, w.im);
    if y == 0.0 {
        return if x >= -1.0 { 0 } else { -1 };
    }
    let s = y.abs();
    let strip = (s / PI).floor() as i64;
    let n = strip / 2;
    let k = if strip % 2 == 1 {
        n + 1
    } else if x > -s / s.tan() {
        n
    } else {
        n + 1
    };
    if y > 0.0 {
        k
    } else {
        -k
    }
}

fn in_branch(k: i64, w: Complex64) -> bool {
    let d = 1e-7 * (1.0 + w.norm());
    branch_of(w) == k
        || branch_of(w + Complex64::new(d, 0.0)) == k
        || branch_of(w - Complex64::new(d, 0.0)) == k
        || branch_of(w + Complex64::new(0.0, d)) == k
        || branch_of(w - Complex64::new(0.0, d)) == k
}

fn halley(z: Complex64, mut w: Complex64) -> Option<Complex64> {
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        if !step.re.is_finite() || !step.im.is_finite() {
            return None;
        }
        w -= step;
        if step.norm() <= 4.0 * f64::EPSILON * (1.0 + w.norm()) {
            return Some(w);
        }
    }
    None
}

/// Branch `k` of the Lambert function: `W·e^W = z`.
///
/// Branch cuts follow the usual convention with values on the negative real
/// axis taken from above.
pub fn lambert_w(k: i64, z: Complex64) -> Result<Complex64> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Domain(format!("lambert_w: non-finite argument {z}")));
    }
    if z.im < 0.0 {
        return lambert_w(-k, z.conj()).map(|w| w.conj());
    }
    if z == Complex64::new(0.0, 0.0) {
        return if k == 0 {
            Ok(z)
        } else {
            Err(Error::Domain(format!("lambert_w: branch {k} is singular at 0")))
        };
    }
    let p = (2.0 * (E * z + 1.0)).sqrt();
    let near_branch_point = (z + 1.0 / E).norm() < 0.3;
    // The series is exact enough on its own right at the branch point.
    if p.norm() < 1e-5 && (k == 0 || k == -1) {
        let p = if k == 0 { p } else { -p };
        return Ok(-1.0 + p - p * p / 3.0);
    }

    let series = |p: Complex64| -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p;
    let asymptotic = {
        let l1 = z.ln() + Complex64::new(0.0, 2.0 * PI * k as f64);
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    let mut guesses = Vec::with_capacity(5);
    if near_branch_point {
        match k {
            0 => guesses.push(series(p)),
            -1 => guesses.push(series(-p)),
            _ => {}
        }
    }
    if k == 0 {
        guesses.push((1.0 + z).ln());
        if z.norm() > 3.0 {
            guesses.insert(0, asymptotic);
        }
    }
    guesses.push(asymptotic);
    guesses.push(series(p));
    guesses.push(series(-p));
    guesses.push(Complex64::new(0.0, 2.0 * PI * k as f64));

    for g in guesses {
        if let Some(w) = halley(z, g) {
            if in_branch(k, w) {
                return Ok(w);
            }
        }
    }
    Err(Error::Convergence(format!(
        "lambert_w: no convergence on branch {k} for z = {z} within {MAX_ITER} iterations"
    )))
}

/// Real principal branch, defined for `x ≥ -1/e`.
pub fn lambert_w0_real(x: f64) -> Result<f64> {
    if x < -1.0 / E {
        return Err(Error::Domain(format!("W0({x}) is not real: argument below -1/e")));
    }
    Ok(lambert_w(0, Complex64::new(x, 0.0))?.re)
}

/// Residual of `λ + γ - c·e^{-λτ}`.
pub fn characteristic_residual(lambda: Complex64, gamma: f64, c: f64, tau: f64) -> Complex64 {
    lambda + gamma - c * (-lambda * tau).exp()
}

fn newton_polish(mut lambda: Complex64, gamma: f64, c: f64, tau: f64) -> Complex64 {
    for _ in 0..MAX_ITER {
        let e = c * (-lambda * tau).exp();
        let g = lambda + gamma - e;
        let dg = 1.0 + tau * e;
        let step = g / dg;
        if !(step.re.is_finite() && step.im.is_finite()) {
            break;
        }
        lambda -= step;
        if step.norm() <= 4.0 * f64::EPSILON * (1.0 + lambda.norm()) {
            break;
        }
    }
    lambda
}

/// Leading roots of `λ + γ = c·e^{-λτ}` for any real `c`, by decreasing real part.
///
/// Candidates come from `λ = W_k(cτe^{γτ})/τ - γ` over branches `|k| ≤ n_roots`
/// and are then polished by Newton's method on the residual.
pub fn delay_equation_roots(gamma: f64, c: f64, tau: f64, n_roots: usize) -> Result<Vec<Complex64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("tau must be positive, got {tau}")));
    }
    if !(gamma.is_finite() && c.is_finite()) {
        return Err(invalid("non-finite coefficients"));
    }
    if c == 0.0 || n_roots == 0 {
        return Ok(if n_roots == 0 { Vec::new() } else { vec![Complex64::new(-gamma, 0.0)] });
    }
    let arg = c * tau * (gamma * tau).exp();
    if !arg.is_finite() {
        return Err(Error::Domain(format!("characteristic roots: cτe^(γτ) overflows for γτ = {}", gamma * tau)));
    }
    let z = Complex64::new(arg, 0.0);
    let mut roots: Vec<Complex64> = Vec::new();
    let kmax = n_roots as i64;
    for k in -kmax..=kmax {
        let w = match lambert_w(k, z) {
            Ok(w) => w,
            Err(_) => continue,
        };
        let lambda = newton_polish(w / tau - gamma, gamma, c, tau);
        let scale = 1.0 + lambda.norm() + c.abs();
        if characteristic_residual(lambda, gamma, c, tau).norm() > 1e-10 * scale {
            continue;
        }
        if roots.iter().all(|r| (r - lambda).norm() > 1e-8 * (1.0 + lambda.norm())) {
            roots.push(lambda);
        }
    }
    if roots.is_empty() {
        return Err(Error::Convergence("no characteristic root converged".into()));
    }
    roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    roots.truncate(n_roots);
    Ok(roots)
}

/// Roots of the linearization at `x = 0`: `λ + γ = r f'(0) e^{-λτ}`.
pub fn characteristic_roots(gamma: f64, r: f64, fprime0: f64, tau: f64, n_roots: usize) -> Result<Vec<Complex64>> {
    if fprime0 < 0.0 {
        return Err(invalid("f'(0) must be non-negative"));
    }
    delay_equation_roots(gamma, r * fprime0, tau, n_roots)
}

/// Hopf threshold of the positive Mackey–Glass (q = 1) equilibrium.
///
/// `None` outside the regime `r > γ`, `γ/r < (p-2)/p`, where no threshold exists.
pub fn hopf_threshold(gamma: f64, r: f64, p: f64) -> Result<Option<f64>> {
    if !(gamma > 0.0 && r > 0.0 && p > 0.0) {
        return Err(invalid("gamma, r and p must be positive"));
    }
    if r <= gamma || gamma / r >= (p - 2.0) / p {
        return Ok(None);
    }
    let d = p * gamma - (p - 1.0) * r;
    let disc = d * d - r * r;
    let ratio = r / d;
    if disc <= 0.0 || !(-1.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!(
            "Hopf threshold undefined: (pγ-(p-1)r)² - r² = {disc}, arccos argument {ratio}"
        )));
    }
    Ok(Some(r / (gamma * disc.sqrt()) * ratio.acos()))
}

/// `max{1, (p-1)²/(4p)} < √2·γ/r`.
pub fn global_periodic_condition(gamma: f64, r: f64, p: f64) -> bool {
    let lhs = 1f64.max((p - 1.0) * (p - 1.0) / (4.0 * p));
    lhs < std::f64::consts::SQRT_2 * gamma / r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Positive equilibrium stable for every delay.
    StableForAllDelays,
    /// Delay below the Hopf threshold.
    DelayStable,
    /// Delay above the Hopf threshold.
    DelayUnstable,
    NoPositiveSteadyState,
    /// Parameters on a strict-inequality boundary.
    Boundary,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::StableForAllDelays => "(i)",
            Regime::DelayStable => "(ii)-stable",
            Regime::DelayUnstable => "(ii)-unstable",
            Regime::NoPositiveSteadyState => "no-positive-steady-state",
            Regime::Boundary => "boundary",
        };
        f.write_str(s)
    }
}

pub fn classify_regime(gamma: f64, r: f64, p: f64, tau: f64) -> Result<Regime> {
    if r <= gamma {
        return Ok(Regime::NoPositiveSteadyState);
    }
    let ratio = gamma / r;
    let edge = (p - 2.0) / p;
    if ratio == edge {
        return Ok(Regime::Boundary);
    }
    if ratio > edge {
        return Ok(Regime::StableForAllDelays);
    }
    let tau0 = hopf_threshold(gamma, r, p)?.ok_or_else(|| Error::Internal("missing Hopf threshold".into()))?;
    Ok(if tau < tau0 {
        Regime::DelayStable
    } else if tau > tau0 {
        Regime::DelayUnstable
    } else {
        Regime::Boundary
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub steady_states: Vec<f64>,
    pub x_star: Option<f64>,
    /// `r f'(0) - γ`.
    pub theta: f64,
    pub lambda_0: Complex64,
    pub roots: Vec<Complex64>,
    /// Leading root of the linearization at `x_star`.
    pub lambda_star: Option<Complex64>,
    pub tau_0: Option<f64>,
    /// Only for Mackey–Glass with `q = 1`.
    pub regime: Option<Regime>,
    pub global_periodic_condition: Option<bool>,
}

/// Full deterministic analysis of a model with constant rates.
pub fn stability_report(model: &ModelSpec, n_roots: usize) -> Result<StabilityReport> {
    let (gamma, r) = match (model.gamma.as_constant(), model.r.as_constant()) {
        (Some(g), Some(r)) => (g, r),
        _ => return Err(Error::Precondition("stability analysis needs constant rates".into())),
    };
    let f = &model.feedback;
    let states = steady_states(gamma, r, f);
    let x_star = states.iter().copied().filter(|&x| x > 0.0).last();
    let fp0 = f.derivative_at_zero();
    let theta = r * fp0 - gamma;
    let roots = characteristic_roots(gamma, r, fp0, model.tau, n_roots.max(1))?;
    let lambda_star = match x_star {
        Some(x) => Some(delay_equation_roots(gamma, r * f.derivative(x), model.tau, 1)?[0]),
        None => None,
    };
    let (tau_0, regime, gpc) = match *f {
        FeedbackFn::MackeyGlass { p, q: 1 } => (
            hopf_threshold(gamma, r, p)?,
            Some(classify_regime(gamma, r, p, model.tau)?),
            Some(global_periodic_condition(gamma, r, p)),
        ),
        _ => (None, None, None),
    };
    Ok(StabilityReport {
        steady_states: states,
        x_star,
        theta,
        lambda_0: roots[0],
        roots,
        lambda_star,
        tau_0,
        regime,
        global_periodic_condition: gpc,
    })
}

/// Delay at which the leading root at `x_star` crosses the imaginary axis,
/// by bisection on `[lo, hi]`.
pub fn leading_root_crossing(gamma: f64, c: f64, lo: f64, hi: f64) -> Result<f64> {
    let re = |tau: f64| -> Result<f64> { Ok(delay_equation_roots(gamma, c, tau, 1)?[0].re) };
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (re(a)?, re(b)?);
    if fa.signum() == fb.signum() {
        return Err(invalid(format!("no sign change of Re λ0 on [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if re(mid)?.signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}
