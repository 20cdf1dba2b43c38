//! Tail bounds for suprema of processes with negative drift, their Monte Carlo
//! verification, and pathwise upper/lower estimates on simulated solutions.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::models::{FeedbackFn, ModelSpec};
use crate::noise::{classify_noise, jump_events_on_stream, NoiseClass, NoiseSpec};
use crate::rng::{stream_rng, Channel};
use crate::solver::{Space, Trajectory};

/// Split `(p, q)` of threshold and drift between Brownian and jump parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub p: f64,
    pub q: f64,
}

impl Split {
    pub const HALF: Split = Split { p: 0.5, q: 0.5 };
    /// Used when the even split is inadmissible.
    pub const WIDE: Split = Split { p: 0.5, q: 0.99 };

    fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0 && self.q > 0.0 && self.q < 1.0) {
            return Err(invalid(format!("split parameters must lie in (0, 1), got p = {}, q = {}", self.p, self.q)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailBoundParams {
    /// Drift lower bound, `a(s) ≥ α`.
    pub alpha: f64,
    /// Coefficient bound, `b(s)² ≤ β²`.
    pub beta: f64,
    #[serde(default = "unit")]
    pub sigma: f64,
    #[serde(default)]
    pub lambda_n: f64,
    #[serde(default)]
    pub zeta: f64,
    /// Window length `T`.
    #[serde(default = "unit")]
    pub t_window: f64,
    /// Integer horizon `l` (the reverse-sup bounds do not depend on it).
    #[serde(default = "twenty")]
    pub horizon: u32,
    #[serde(default = "unit")]
    pub kappa2: f64,
    /// `E Z₁`.
    #[serde(default)]
    pub mean_jump: f64,
    /// Martingale noise, allowing `R₀ = 0`.
    #[serde(default = "yes")]
    pub centered: bool,
    /// `None` picks `(½, ½)` when admissible, else `(½, max(0.99, (1 + λ_Nζβ/α)/2))`.
    #[serde(default)]
    pub split: Option<Split>,
}

fn unit() -> f64 {
    1.0
}

fn twenty() -> u32 {
    20
}

fn yes() -> bool {
    true
}

impl TailBoundParams {
    pub fn brownian(alpha: f64, beta: f64) -> Self {
        TailBoundParams {
            alpha,
            beta,
            sigma: 1.0,
            lambda_n: 0.0,
            zeta: 0.0,
            t_window: 1.0,
            horizon: 20,
            kappa2: 1.0,
            mean_jump: 0.0,
            centered: true,
            split: None,
        }
    }

    /// Constants for `Y = -αt + β·L` with `L` described by `noise`.
    pub fn from_noise(alpha: f64, beta: f64, noise: &NoiseSpec) -> Self {
        TailBoundParams {
            sigma: noise.sigma,
            lambda_n: noise.lambda_n,
            zeta: noise.zeta,
            mean_jump: noise.mean_jump(),
            centered: classify_noise(noise) == NoiseClass::HRegM,
            ..Self::brownian(alpha, beta)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("sigma", self.sigma),
            ("lambda_n", self.lambda_n),
            ("zeta", self.zeta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.t_window > 0.0 && self.t_window.is_finite()) {
            return Err(invalid("window length T must be positive"));
        }
        if !(self.kappa2 > 0.0 && self.kappa2.is_finite()) {
            return Err(invalid("kappa2 must be positive"));
        }
        if !self.mean_jump.is_finite() || self.mean_jump.abs() > self.zeta + 1e-12 {
            return Err(invalid("mean jump must satisfy |E Z| <= zeta"));
        }
        if let Some(s) = self.split {
            s.validate()?;
        }
        Ok(())
    }

    /// `λ_N·ζ·β`, the jump drift the negative drift has to dominate.
    pub fn jump_load(&self) -> f64 {
        self.lambda_n * self.zeta * self.beta
    }

    pub fn effective_split(&self) -> Split {
        let load = self.jump_load();
        self.split.unwrap_or(if self.alpha > 2.0 * load {
            Split::HALF
        } else {
            // q must exceed load/α; move halfway to 1 when 0.99 is too small.
            Split {
                q: Split::WIDE.q.max(0.5 * (1.0 + load / self.alpha)),
                ..Split::WIDE
            }
        })
    }

    /// `R₀ = 4 λ_N |E Z₁| β T`, zero for martingale noise.
    pub fn r0(&self) -> f64 {
        if self.centered {
            0.0
        } else {
            4.0 * self.lambda_n * self.mean_jump.abs() * self.beta * self.t_window
        }
    }

    /// `C = exp(4κ₂λ_NζβT)·exp(λ_N T (e^{4κ₂ζβ} - 1))`.
    pub fn window_constant(&self) -> f64 {
        self.log_window_constant().exp()
    }

    /// `ln C`, finite where `C` itself overflows.
    pub fn log_window_constant(&self) -> f64 {
        let k = self.kappa2;
        let zb = self.zeta * self.beta;
        4.0 * k * self.lambda_n * zb * self.t_window + self.lambda_n * self.t_window * (4.0 * k * zb).exp_m1()
    }
}

/// Bound value with its additive terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub total: f64,
    pub terms: [f64; 3],
}

impl BoundValue {
    fn of(terms: [f64; 3]) -> Self {
        BoundValue {
            total: terms.iter().sum(),
            terms,
        }
    }
}

fn check_r(r: f64) -> Result<()> {
    if !(r >= 0.0) || r.is_nan() {
        return Err(invalid(format!("R must be >= 0, got {r}")));
    }
    Ok(())
}

fn brownian_reverse_terms(alpha: f64, beta: f64, r: f64) -> [f64; 2] {
    let b2 = beta * beta;
    [
        4.0 * (-r * r / (64.0 * b2)).exp(),
        4.0 * (-alpha * r / (64.0 * b2)).exp() / -(-alpha * alpha / (128.0 * b2)).exp_m1(),
    ]
}

/// `4e^{-R²/(64β²)} + 4e^{-αR/(64β²)} / (1 - e^{-α²/(128β²)})`.
pub fn bound_reverse_sup_brownian(alpha: f64, beta: f64, r: f64) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(invalid(format!(
            "reverse-sup bound needs a strictly negative drift and beta > 0 (alpha = {alpha}, beta = {beta})"
        )));
    }
    check_r(r)?;
    let [a, b] = brownian_reverse_terms(alpha, beta, r);
    Ok(a + b)
}

/// `2e^{-R²/(16β²T)}`.
pub fn bound_window_sup_brownian(beta: f64, t: f64, r: f64) -> Result<f64> {
    if !(beta > 0.0 && t > 0.0) {
        return Err(invalid(format!("window bound needs beta > 0 and T > 0 (beta = {beta}, T = {t})")));
    }
    check_r(r)?;
    Ok(2.0 * (-r * r / (16.0 * beta * beta * t)).exp())
}

/// `(λ_N p/(κ q))(e^{κζβ/p} - 1)`.
pub fn kappa1_function(kappa: f64, lambda_n: f64, zeta: f64, beta: f64, split: Split) -> f64 {
    lambda_n * split.p / (kappa * split.q) * (kappa * zeta * beta / split.p).exp_m1()
}

/// Largest `κ₁` with `f(κ₁) ≤ α`; `None` when the jump part vanishes.
pub fn solve_kappa1(alpha: f64, lambda_n: f64, zeta: f64, beta: f64, split: Split) -> Result<Option<f64>> {
    split.validate()?;
    let load = lambda_n * zeta * beta;
    if load == 0.0 {
        return Ok(None);
    }
    let limit = load / split.q;
    if !(alpha > limit) {
        return Err(Error::Precondition(format!(
            "jump bound needs alpha > lambda_N*zeta*beta/q = {limit} (alpha > lambda_N*zeta*beta as q -> 1), got alpha = {alpha}"
        )));
    }
    let f = |k: f64| kappa1_function(k, lambda_n, zeta, beta, split);
    let mut hi = 1.0 / (zeta * beta / split.p);
    while f(hi) <= alpha {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Convergence("kappa1 bracket overflow".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// Brownian part (two terms) plus `e^{-κ₁R}` for the jump part.
pub fn bound_reverse_sup_levy(params: &TailBoundParams, r: f64) -> Result<BoundValue> {
    params.validate()?;
    check_r(r)?;
    if !(params.alpha > 0.0) {
        return Err(invalid("reverse-sup bound needs alpha > 0"));
    }
    let split = params.effective_split();
    let load = params.jump_load();
    if load > 0.0 && params.alpha <= load {
        return Err(Error::Precondition(format!(
            "alpha > lambda_N*zeta*beta is required: alpha = {}, lambda_N*zeta*beta = {load}",
            params.alpha
        )));
    }
    let kappa1 = solve_kappa1(params.alpha, params.lambda_n, params.zeta, params.beta, split)?;
    let sb = params.sigma * params.beta;
    let [t1, t2] = if sb > 0.0 {
        brownian_reverse_terms((1.0 - split.q) * params.alpha, sb, (1.0 - split.p) * r)
    } else {
        [if r > 0.0 { 0.0 } else { 1.0 }, 0.0]
    };
    let t3 = kappa1.map_or(0.0, |k| (-k * r).exp());
    Ok(BoundValue::of([t1, t2, t3]))
}

/// `2e^{-R²/(64β²σ²T)} + C e^{-κ₂R} + 1{R < R₀}`.
pub fn bound_window_sup_levy(params: &TailBoundParams, r: f64) -> Result<BoundValue> {
    params.validate()?;
    check_r(r)?;
    let sb = params.sigma * params.beta;
    let t1 = if sb > 0.0 {
        2.0 * (-r * r / (64.0 * sb * sb * params.t_window)).exp()
    } else if r > 0.0 {
        0.0
    } else {
        1.0
    };
    let t2 = (params.log_window_constant() - params.kappa2 * r).exp();
    let t3 = if r < params.r0() { 1.0 } else { 0.0 };
    Ok(BoundValue::of([t1, t2, t3]))
}

/// Reverse-sup bound at `R/3` plus two unit-window bounds at `R/3`.
pub fn bound_composite(params: &TailBoundParams, r: f64) -> Result<BoundValue> {
    let reverse = bound_reverse_sup_levy(params, r / 3.0)?;
    let unit = TailBoundParams {
        t_window: 1.0,
        ..params.clone()
    };
    let window = bound_window_sup_levy(&unit, r / 3.0)?;
    Ok(BoundValue::of([reverse.total, window.total, window.total]))
}

/// `r̃·M/γ̃`, the bound on `limsup E X(t)`.
pub fn ultimate_mean_bound(model: &ModelSpec) -> f64 {
    model.r_sup() * model.feedback.sup_bound() / model.gamma_inf()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    ReverseSupBrownian,
    WindowSupBrownian,
    ReverseSupLevy,
    WindowSupLevy,
    Composite,
}

impl BoundKind {
    pub fn evaluate(&self, params: &TailBoundParams, r: f64) -> Result<BoundValue> {
        match self {
            BoundKind::ReverseSupBrownian => {
                bound_reverse_sup_brownian(params.alpha, params.beta, r)?;
                let [a, b] = brownian_reverse_terms(params.alpha, params.beta, r);
                Ok(BoundValue::of([a, b, 0.0]))
            }
            BoundKind::WindowSupBrownian => Ok(BoundValue::of([
                bound_window_sup_brownian(params.beta, params.t_window, r)?,
                0.0,
                0.0,
            ])),
            BoundKind::ReverseSupLevy => bound_reverse_sup_levy(params, r),
            BoundKind::WindowSupLevy => bound_window_sup_levy(params, r),
            BoundKind::Composite => bound_composite(params, r),
        }
    }

    /// Smallest `R` with bound `≤ level`, by bisection on the monotone bound.
    pub fn threshold(&self, params: &TailBoundParams, level: f64) -> Result<f64> {
        let value = |r: f64| {
            let v = self.evaluate(params, r)?.total;
            if v.is_nan() {
                return Err(Error::Domain(format!("bound is not a number at R = {r}")));
            }
            Ok(v)
        };
        if value(0.0)? <= level {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while value(hi)? > level {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Convergence(format!("bound never drops below {level}")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if value(mid)? > level {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        Ok(hi)
    }

    /// `n` points spanning the range where the bound lies in `(lo_level, 1)`.
    pub fn informative_grid(&self, params: &TailBoundParams, lo_level: f64, n: usize) -> Result<Vec<f64>> {
        let a = self.threshold(params, 1.0)?;
        let b = self.threshold(params, lo_level)?;
        let n = n.max(2);
        // Stay strictly inside the open interval.
        let (a, b) = (a + 1e-9 * (b - a), b - 1e-9 * (b - a));
        Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub r_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub components: Vec<[f64; 3]>,
}

impl BoundCurve {
    pub fn evaluate(kind: BoundKind, params: &TailBoundParams, r_grid: &[f64]) -> Result<Self> {
        let vals = r_grid
            .iter()
            .map(|&r| kind.evaluate(params, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundCurve {
            kind,
            r_grid: r_grid.to_vec(),
            values: vals.iter().map(|v| v.total).collect(),
            components: vals.iter().map(|v| v.terms).collect(),
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "R,bound,term_1,term_2,term_3")?;
        for ((r, v), c) in self.r_grid.iter().zip(&self.values).zip(&self.components) {
            writeln!(out, "{r},{v},{},{},{}", c[0], c[1], c[2])?;
        }
        Ok(())
    }
}

/// `Y(t) = -α t + β L(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProcess {
    pub alpha: f64,
    pub beta: f64,
    pub noise: NoiseSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
    /// `sup_{0≤θ≤l} (Y(l) - Y(θ))`.
    ReverseSup { horizon: f64 },
    /// `sup_{0≤t≤T} β L(t)` (drift ignored).
    WindowSup { length: f64 },
}

impl Statistic {
    fn horizon(&self) -> f64 {
        match *self {
            Statistic::ReverseSup { horizon } => horizon,
            Statistic::WindowSup { length } => length,
        }
    }
}

/// Exact sample of the statistic: Gaussian segments between jumps with
/// Brownian-bridge extrema.
pub fn sample_statistic(process: &SyntheticProcess, stat: Statistic, seed: u64, index: u64) -> Result<f64> {
    let horizon = stat.horizon();
    let jumps = if process.noise.lambda_n > 0.0 {
        jump_events_on_stream(seed, index, &process.noise, horizon)?
    } else {
        Vec::new()
    };
    let mut normals = stream_rng(seed, index, Channel::Brownian);
    let mut uniforms = stream_rng(seed, index, Channel::Bridge);
    let (drift, track_max) = match stat {
        Statistic::ReverseSup { .. } => (-process.alpha, false),
        Statistic::WindowSup { .. } => (0.0, true),
    };
    let vol = process.beta * process.noise.sigma;
    let (mut y, mut lo, mut hi) = (0.0f64, 0.0f64, 0.0f64);
    let mut s = 0.0;
    let ends = jumps.iter().map(|j| (j.time, j.size)).chain(std::iter::once((horizon, 0.0)));
    for (end, size) in ends {
        let h = end - s;
        if h > 0.0 {
            let z: f64 = normals.sample(StandardNormal);
            let y_end = y + drift * h + vol * h.sqrt() * z;
            let var = vol * vol * h;
            if var > 0.0 {
                let u: f64 = 1.0 - uniforms.random::<f64>();
                let spread = ((y_end - y).powi(2) - 2.0 * var * u.ln()).sqrt();
                if track_max {
                    hi = hi.max(0.5 * (y + y_end + spread));
                } else {
                    lo = lo.min(0.5 * (y + y_end - spread));
                }
            }
            y = y_end;
            lo = lo.min(y);
            hi = hi.max(y);
        }
        y += process.beta * size;
        lo = lo.min(y);
        hi = hi.max(y);
        s = end;
    }
    Ok(if track_max { hi } else { y - lo })
}

/// One-sided Clopper–Pearson upper limit for `k` successes in `n` trials.
pub fn clopper_pearson_upper(k: u64, n: u64, confidence: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(invalid("invalid binomial counts"));
    }
    if k == n {
        return Ok(1.0);
    }
    if k == 0 {
        return Ok(1.0 - (1.0 - confidence).powf(1.0 / n as f64));
    }
    let beta = Beta::new((k + 1) as f64, (n - k) as f64).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(beta.inverse_cdf(confidence))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub r: f64,
    pub empirical: f64,
    pub upper_cl: f64,
    pub bound: f64,
    /// `None` where the bound is vacuous (≥ 1) or too small to resolve.
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub statistic: Statistic,
    pub n_samples: usize,
    pub confidence: f64,
    pub rows: Vec<VerificationRow>,
    pub advisories: Vec<String>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn checked(&self) -> usize {
        self.rows.iter().filter(|r| r.pass.is_some()).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "R,empirical,upper_cl,bound,pass")?;
        for row in &self.rows {
            let pass = match row.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "n/a",
            };
            writeln!(out, "{},{},{},{},{}", row.r, row.empirical, row.upper_cl, row.bound, pass)?;
        }
        writeln!(
            out,
            "# summary: {} ({} of {} points checked, n = {}, {} advisories)",
            if self.pass { "PASS" } else { "FAIL" },
            self.checked(),
            self.rows.len(),
            self.n_samples,
            self.advisories.len()
        )?;
        Ok(())
    }
}

/// Compares empirical tail frequencies with `bound` on `r_grid`.
///
/// A point passes when the one-sided upper confidence limit of the empirical
/// tail does not exceed the bound; points with a vacuous bound are skipped.
#[allow(clippy::too_many_arguments)]
pub fn mc_verify_tail_bound(
    process: &SyntheticProcess,
    stat: Statistic,
    bound: &(dyn Fn(f64) -> Result<f64> + Sync),
    r_grid: &[f64],
    n_samples: usize,
    seed: u64,
    confidence: f64,
    workers: Option<usize>,
) -> Result<VerificationReport> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be >= 1"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid("confidence must lie in (0, 1)"));
    }
    if !(process.alpha >= 0.0 && process.beta >= 0.0) {
        return Err(invalid("synthetic process needs alpha, beta >= 0"));
    }
    process.noise.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Internal(e.to_string()))?;
    let samples: Vec<f64> = pool.install(|| {
        (0..n_samples as u64)
            .into_par_iter()
            .map(|i| sample_statistic(process, stat, seed, i))
            .collect::<Result<Vec<_>>>()
    })?;

    let floor = clopper_pearson_upper(0, n_samples as u64, confidence)?;
    let mut rows = Vec::with_capacity(r_grid.len());
    let mut advisories = Vec::new();
    for &r in r_grid {
        let k = samples.iter().filter(|&&s| s >= r).count() as u64;
        let upper_cl = clopper_pearson_upper(k, n_samples as u64, confidence)?;
        let b = bound(r)?;
        let pass = if b >= 1.0 {
            None
        } else if b < floor {
            advisories.push(format!(
                "R = {r}: bound {b:.3e} is below the smallest resolvable upper limit {floor:.3e} for n = {n_samples}"
            ));
            None
        } else {
            Some(upper_cl <= b)
        };
        rows.push(VerificationRow {
            r,
            empirical: k as f64 / n_samples as f64,
            upper_cl,
            bound: b,
            pass,
        });
    }
    let pass = rows.iter().all(|r| r.pass != Some(false));
    Ok(VerificationReport {
        statistic: stat,
        n_samples,
        confidence,
        rows,
        advisories,
        pass,
    })
}

/// Constants for the pathwise estimates on the log-transformed solution `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateCheckParams {
    pub r: f64,
    pub gamma_tilde: f64,
    pub r_tilde: f64,
    pub m_sup: f64,
    /// Largest jump of the forcing path, `β·ζ`.
    pub zeta_eff: f64,
    pub c_f: f64,
    pub delta: Option<f64>,
    pub beta_drift: f64,
    pub tau: f64,
    /// Auxiliary drift bounds.
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Artificial mortality shift.
    pub a_shift: f64,
}

impl EstimateCheckParams {
    pub fn from_model(model: &ModelSpec, noise: &NoiseSpec, r: f64) -> Self {
        let (alpha_min, alpha_max) = model.aux_drift_bounds(noise);
        let delta = match model.feedback {
            FeedbackFn::MackeyGlass { q: 0, .. } => lower_delta(model),
            _ => None,
        };
        EstimateCheckParams {
            r,
            gamma_tilde: model.gamma_inf(),
            r_tilde: model.r_sup(),
            m_sup: model.feedback.sup_bound(),
            zeta_eff: model.beta() * noise.zeta,
            c_f: 0.0,
            delta,
            beta_drift: model.gamma_inf(),
            tau: model.tau,
            alpha_min,
            alpha_max,
            a_shift: 0.0,
        }
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    /// `γ̃ - r̃ M e^{-R}`.
    pub fn upper_rate(&self) -> f64 {
        self.gamma_tilde - self.r_tilde * self.m_sup * (-self.r).exp()
    }

    /// `γ_A = γ + A`.
    pub fn gamma_a(&self) -> f64 {
        self.gamma_tilde + self.a_shift
    }

    /// `γ̃ > α_max + λ_N ζ β`.
    pub fn upper_drift_condition(&self, jump_load: f64) -> bool {
        self.gamma_tilde > self.alpha_max + jump_load
    }

    /// `A > α_min + λ_N ζ β`.
    pub fn lower_drift_condition(&self, jump_load: f64) -> bool {
        self.a_shift > self.alpha_min + jump_load
    }
}

/// Largest `δ` with `r f(δ) ≥ γ δ` for a decreasing feedback with `f(0) > 0`.
fn lower_delta(model: &ModelSpec) -> Option<f64> {
    let (gamma, r) = (model.gamma.as_constant()?, model.r.as_constant()?);
    let f = &model.feedback;
    if !(f.at_zero() > 0.0 && r > 0.0) {
        return None;
    }
    let g = |d: f64| r * f.eval_unchecked(d) - gamma * d;
    let (mut lo, mut hi) = (0.0, r * f.at_zero() / gamma);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub z: f64,
    pub rhs: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathwiseReport {
    pub checked: usize,
    /// Grid times beyond the threshold, where the non-trivial branch applies.
    pub active: usize,
    pub violations: Vec<Violation>,
    /// Largest `z - R` (upper) or `-R - z` (lower).
    pub max_overshoot: f64,
    /// Largest `z - rhs` (upper) or `rhs - z` (lower) over active times.
    pub max_excess: f64,
}

impl PathwiseReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: &PathwiseReport) {
        self.checked += other.checked;
        self.active += other.active;
        self.violations.extend_from_slice(&other.violations);
        self.max_overshoot = self.max_overshoot.max(other.max_overshoot);
        self.max_excess = self.max_excess.max(other.max_excess);
    }
}

fn log_path(tr: &Trajectory) -> Result<(Vec<f64>, &[f64])> {
    let v = tr
        .forcing
        .as_deref()
        .ok_or_else(|| invalid("pathwise checks need a trajectory with its forcing path"))?;
    let z = match tr.space {
        Space::Transformed => tr.values.clone(),
        Space::Original => tr.values_in(Space::Transformed),
    };
    if z.len() != v.len() || z.is_empty() {
        return Err(invalid("forcing path and trajectory lengths differ"));
    }
    Ok((z, v))
}

/// Checks `z(t) ≤ max{R, R + ζ - α(t - a^t) + v(t) - v(a^t)}` at every grid time.
pub fn check_pathwise_upper(tr: &Trajectory, params: &EstimateCheckParams) -> Result<PathwiseReport> {
    let (z, v) = log_path(tr)?;
    let r = params.r;
    if !(z[0] < r) {
        return Err(Error::Precondition(format!("upper estimate needs z(t0) < R: z(t0) = {}, R = {r}", z[0])));
    }
    let alpha = params.upper_rate();
    let h = tr.dt_out;
    let mut report = PathwiseReport::default();
    let mut a = 0usize;
    let mut lip = alpha.abs();
    for k in 0..z.len() {
        report.checked += 1;
        if k > 0 {
            let d = (z[k] - z[k - 1]) - (v[k] - v[k - 1]);
            lip = lip.max(d.abs() / h);
        }
        if z[k] < r {
            a = k;
            lip = alpha.abs();
            continue;
        }
        report.active += 1;
        report.max_overshoot = report.max_overshoot.max(z[k] - r);
        let t = k as f64 * h;
        let t_a = a as f64 * h;
        let rhs = r.max(r + params.zeta_eff - alpha * (t - t_a) + v[k] - v[a]);
        let tolerance = 2.0 * lip * h + 1e-9;
        report.max_excess = report.max_excess.max(z[k] - rhs);
        if z[k] > rhs + tolerance {
            report.violations.push(Violation { t, z: z[k], rhs, tolerance });
        }
    }
    Ok(report)
}

/// Checks `z(t) ≥ min{-R, -R - (C_F + β)τ - ζ + v(t) - v(a^t)}` at every grid time.
pub fn check_pathwise_lower(tr: &Trajectory, params: &EstimateCheckParams) -> Result<PathwiseReport> {
    let (z, v) = log_path(tr)?;
    let r = params.r;
    let delta = params.delta.ok_or_else(|| {
        Error::Precondition("lower estimate needs f(0) > 0 and a constant-rate model (no admissible delta)".into())
    })?;
    if !((-r).exp() < delta) {
        return Err(Error::Precondition(format!("lower estimate needs e^-R < delta: e^-R = {}, delta = {delta}", (-r).exp())));
    }
    if !(z[0] > -r) {
        return Err(Error::Precondition(format!("lower estimate needs z(t0) > -R: z(t0) = {}, R = {r}", z[0])));
    }
    let drift_scale = params.c_f + params.beta_drift;
    let h = tr.dt_out;
    let mut report = PathwiseReport::default();
    let mut a = 0usize;
    let mut lip = drift_scale;
    for k in 0..z.len() {
        report.checked += 1;
        if k > 0 {
            let d = (z[k] - z[k - 1]) - (v[k] - v[k - 1]);
            lip = lip.max(d.abs() / h);
        }
        if z[k] > -r {
            a = k;
            lip = drift_scale;
            continue;
        }
        report.active += 1;
        report.max_overshoot = report.max_overshoot.max(-r - z[k]);
        let rhs = (-r).min(-r - drift_scale * params.tau - params.zeta_eff + v[k] - v[a]);
        let tolerance = 2.0 * lip * h + 1e-9;
        report.max_excess = report.max_excess.max(rhs - z[k]);
        if z[k] < rhs - tolerance {
            report.violations.push(Violation {
                t: k as f64 * h,
                z: z[k],
                rhs,
                tolerance,
            });
        }
    }
    Ok(report)
}
