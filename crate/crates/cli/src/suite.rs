//! Acceptance checks. Each criterion has a pinned tolerance and runtime budget.

use std::fmt;
use std::time::{Duration, Instant};

use sdde_core::analysis::{
    characteristic_residual, characteristic_roots, global_periodic_condition, hopf_threshold,
    leading_root_crossing, steady_states,
};
use sdde_core::noise::NoisePath;
use sdde_core::{FeedbackFn, JumpLaw, NoiseSpec};

use crate::config::{self, LoadedConfig};
use crate::pipeline::{self, Products};

pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const WINDOW_L1_TOL: f64 = 0.05;
pub const MEAN_BOUND_SLACK: f64 = 0.05;
pub const ERGODIC_L1_TOL: f64 = 0.1;
pub const SUPPORT_FLOOR: f64 = 0.05;
pub const ROOT_RESIDUAL_TOL: f64 = 1e-10;
pub const TAU0_REFERENCE: f64 = 0.1351;
pub const TAU0_TOL: f64 = 1e-3;
pub const MOMENT_SIGMAS: f64 = 3.0;
pub const N_MOMENT_PATHS: u64 = 10_000;

/// Result line of one criterion.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    /// Measured quantity against its tolerance.
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
}

impl Outcome {
    pub fn within_budget(&self) -> bool {
        self.budget.is_none_or(|b| self.elapsed <= b)
    }

    pub fn passed(&self) -> bool {
        self.pass && self.within_budget()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let budget = match self.budget {
            Some(b) => format!("{:.2} s of {} s", self.elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.2} s", self.elapsed.as_secs_f64()),
        };
        let over = if self.within_budget() { "" } else { ", over budget" };
        write!(
            f,
            "criterion {:02} [{}] {}: {} ({budget}{over})",
            self.id,
            if self.passed() { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }
}

pub const CRITERIA: &[(u8, &str)] = &[
    (1, "fixed-point exactness"),
    (2, "deterministic window invariance"),
    (3, "positivity"),
    (4, "ultimate mean bound"),
    (5, "ergodicity indication"),
    (6, "bounded away from zero"),
    (7, "Brownian reverse-sup tail bound"),
    (8, "Brownian window-sup tail bound"),
    (9, "Levy tail bounds"),
    (10, "pathwise estimates"),
    (11, "stability analysis"),
    (12, "noise moments"),
    (13, "determinism across worker counts"),
];

/// Runs the selected criteria (all when `ids` is empty) in order, calling
/// `report` after each.
pub fn run(ids: &[u8], workers: Option<usize>, mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let mut out = Vec::new();
    for &(id, title) in CRITERIA {
        if !ids.is_empty() && !ids.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check(id, workers) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        let o = Outcome {
            id,
            title,
            pass,
            detail,
            elapsed: start.elapsed(),
            budget: budget(id),
        };
        report(&o);
        out.push(o);
    }
    out
}

fn budget(id: u8) -> Option<Duration> {
    let s = match id {
        1 => 1,
        2 | 7 => 60,
        4 | 5 | 9 | 10 => 120,
        8 | 12 => 30,
        11 => 10,
        _ => return None,
    };
    Some(Duration::from_secs(s))
}

fn check(id: u8, workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    match id {
        1 => fixed_point(workers),
        2 => window_invariance(workers),
        3 => positivity(workers),
        4 => mean_bound(workers),
        5 => ergodicity(workers),
        6 => bounded_away(workers),
        7 => tail_check("reverse_sup_brownian", workers),
        8 => tail_check("window_sup_brownian", workers),
        9 => tail_check("levy_tail", workers),
        10 => pathwise(workers),
        11 => stability(),
        12 => noise_moments(),
        13 => determinism(),
        _ => anyhow::bail!("unknown criterion {id}"),
    }
}

fn preset(name: &str, overrides: &[&str]) -> anyhow::Result<LoadedConfig> {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    config::load(name, &ov)
}

fn run_preset(
    name: &str,
    overrides: &[&str],
    workers: Option<usize>,
    products: Products,
) -> anyhow::Result<pipeline::EnsembleResult> {
    pipeline::run_ensemble(&preset(name, overrides)?, workers, products)
}

const ONLY_HISTOGRAM: Products = Products {
    timeseries: false,
    histogram: true,
    phase: false,
    pathwise: false,
};

/// Criterion-1 setup: fig1 parameters started at the positive equilibrium.
const FIXED_POINT: &[&str] = &[
    "history.constant=0.0",
    "trajectory.t_end=100.0",
    "trajectory.space=\"transformed\"",
    "measure.start=50.0",
    "measure.end=100.0",
    "outputs.timeseries_end=100.0",
];

fn fixed_point(workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    let res = run_preset("fig1", FIXED_POINT, workers, Products::all())?;
    let max = res.timeseries[0].iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let n = res.timeseries[0].len();
    Ok((
        max < FIXED_POINT_TOL && n == 100_001,
        format!("max |Y| = {max:.3e} over {n} grid points, tolerance {FIXED_POINT_TOL:e}"),
    ))
}

fn window_invariance(workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    let res = run_preset("fig1", &[], workers, ONLY_HISTOGRAM)?;
    let st = res
        .stationarity
        .ok_or_else(|| anyhow::anyhow!("fig1 preset has no stationarity split"))?;
    let (lo, hi) = (&st.windows[0], &st.windows[1]);
    Ok((
        st.max_distance < WINDOW_L1_TOL,
        format!(
            "L1([{}, {}], [{}, {}]) = {:.4}, tolerance {WINDOW_L1_TOL}",
            lo.start,
            lo.end(),
            hi.start,
            hi.end(),
            st.max_distance
        ),
    ))
}

fn positivity(workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    let runs: [(&str, &[&str]); 5] = [
        ("fig1", FIXED_POINT),
        ("fig1", &[]),
        ("fig2_p4", &[]),
        ("fig2_p6", &[]),
        ("fig2_p8", &[]),
    ];
    let (mut samples, mut bad, mut blow) = (0u64, 0u64, 0usize);
    let mut min_x = f64::INFINITY;
    for (name, ov) in runs {
        let res = run_preset(name, ov, workers, Products::default())?;
        samples += res.samples;
        bad += res.nonpositive;
        blow += res.blow_downs.len();
        min_x = min_x.min(res.min_x);
    }
    Ok((
        bad == 0 && blow == 0,
        format!("{bad} non-positive of {samples} original-space samples, {blow} blow-downs, min x = {min_x:.4e}"),
    ))
}

fn mean_bound(workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    let loaded = preset("fig2_p6", &[])?;
    let model = loaded.config.model()?;
    let m = model.feedback.sup_bound();
    let res = pipeline::run_ensemble(&loaded, workers, ONLY_HISTOGRAM)?;
    let mean = res
        .window_mean_x
        .ok_or_else(|| anyhow::anyhow!("no completed trajectories"))?;
    let limit = res.ultimate_mean_bound * (1.0 + MEAN_BOUND_SLACK);
    Ok((
        mean <= limit && res.blow_downs.is_empty(),
        format!(
            "mean X over [250, 500] = {mean:.5}, limit (r/gamma) M (1 + {MEAN_BOUND_SLACK}) = {limit:.5} with M = {m:.6}"
        ),
    ))
}

fn ergodicity(workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    let a = run_preset("fig2_p6", &[], workers, ONLY_HISTOGRAM)?;
    let b = run_preset("fig3", &[], workers, ONLY_HISTOGRAM)?;
    let (ha, hb) = match (&a.histogram, &b.histogram) {
        (Some(x), Some(y)) => (x, y),
        _ => anyhow::bail!("missing histogram"),
    };
    let d = sdde_core::measure::measure_distance(ha, hb)?;
    Ok((
        d < ERGODIC_L1_TOL,
        format!("L1(psi = 0.5, psi = 0) = {d:.4}, tolerance {ERGODIC_L1_TOL}"),
    ))
}

fn bounded_away(workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    let res = run_preset("fig1", &[], workers, ONLY_HISTOGRAM)?;
    let edge = res
        .support_lower_edge()
        .ok_or_else(|| anyhow::anyhow!("empty histogram"))?;
    Ok((
        edge > SUPPORT_FLOOR,
        format!("support lower edge m = {edge:.4} (min sample over run {:.4}), floor {SUPPORT_FLOOR}", res.min_x),
    ))
}

fn tail_check(name: &str, workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    let loaded = preset(name, &[])?;
    let reports = pipeline::verify_bounds(&loaded.config, workers)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, rep) in &reports {
        let checked = rep.checked();
        let max_cl = rep
            .rows
            .iter()
            .filter(|r| r.pass.is_some())
            .map(|r| r.upper_cl / r.bound)
            .fold(0.0, f64::max);
        pass &= rep.pass && checked > 0;
        let range = match (rep.rows.first(), rep.rows.last()) {
            (Some(a), Some(b)) => format!("R in [{:.4}, {:.4}]", a.r, b.r),
            _ => "no grid".into(),
        };
        parts.push(format!(
            "{}: {checked}/{} points, {range}, max upper_cl/bound = {max_cl:.3}",
            pipeline::kind_name(*kind),
            rep.rows.len()
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn pathwise(workers: Option<usize>) -> anyhow::Result<(bool, String)> {
    let loaded = preset("pathwise", &[])?;
    let p = loaded.config.pathwise.clone().unwrap_or_else(|| config::PathwiseSection {
        upper_r: None,
        lower_r: None,
    });
    let res = pipeline::run_ensemble(
        &loaded,
        workers,
        Products {
            pathwise: true,
            ..Products::default()
        },
    )?;
    let (up, lo) = match (&res.upper, &res.lower) {
        (Some(u), Some(l)) => (u, l),
        _ => anyhow::bail!("pathwise preset must configure both checks"),
    };
    Ok((
        up.passed() && lo.passed() && res.blow_downs.is_empty(),
        format!(
            "upper R = {}: {} violations, {} of {} times active; lower R = {}: {} violations, {} of {} times active; {} trajectories",
            p.upper_r.unwrap_or(f64::NAN),
            up.violations.len(),
            up.active,
            up.checked,
            p.lower_r.unwrap_or(f64::NAN),
            lo.violations.len(),
            lo.active,
            lo.checked,
            res.timeseries.len()
        ),
    ))
}

/// Point `i` of a Halton sequence in base `b`.
fn halton(mut i: u64, b: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// `(γ, r, τ)` sweep used by the root checks.
pub fn stability_sweep() -> Vec<(f64, f64, f64)> {
    (1..=100u64)
        .map(|i| {
            let gamma = 0.5 + 4.5 * halton(i, 2);
            let r = 0.1 + 9.9 * halton(i, 3);
            let tau = 0.1 + 2.9 * halton(i, 5);
            (gamma, r, tau)
        })
        .collect()
}

fn stability() -> anyhow::Result<(bool, String)> {
    let f = FeedbackFn::mackey_glass(8.0, 1);
    let fp0 = f.derivative_at_zero();
    let (mut max_res, mut mismatches, mut skipped) = (0.0f64, 0usize, 0usize);
    for (gamma, r, tau) in stability_sweep() {
        let roots = characteristic_roots(gamma, r, fp0, tau, 5)?;
        for l in &roots {
            max_res = max_res.max(characteristic_residual(*l, gamma, r * fp0, tau).norm());
        }
        let theta = r * fp0 - gamma;
        if theta.abs() < 1e-9 {
            skipped += 1;
            continue;
        }
        if roots[0].re.signum() != theta.signum() {
            mismatches += 1;
        }
    }
    let (gamma, r, p) = (5.0, 10.0, 8.0);
    let tau0 = hopf_threshold(gamma, r, p)?.ok_or_else(|| anyhow::anyhow!("no Hopf threshold"))?;
    let x_star = steady_states(gamma, r, &f)
        .into_iter()
        .filter(|&x| x > 0.0)
        .last()
        .ok_or_else(|| anyhow::anyhow!("no positive steady state"))?;
    let crossing = leading_root_crossing(gamma, r * f.derivative(x_star), 0.05, 0.5)?;
    let gpc: Vec<bool> = [4.0, 6.0, 8.0]
        .iter()
        .map(|&p| global_periodic_condition(gamma, r, p))
        .collect();
    let pass = max_res < ROOT_RESIDUAL_TOL
        && mismatches == 0
        && (tau0 - TAU0_REFERENCE).abs() < TAU0_TOL
        && (tau0 - crossing).abs() < TAU0_TOL
        && gpc.iter().all(|g| !g);
    Ok((
        pass,
        format!(
            "(a) max residual {max_res:.2e} < {ROOT_RESIDUAL_TOL:e}; (b) {mismatches} sign mismatches in 100 ({skipped} with theta = 0); \
             (c) tau_0 = {tau0:.6}, crossing = {crossing:.6}, tolerance {TAU0_TOL}; (d) global condition for p = 4, 6, 8: {gpc:?}"
        ),
    ))
}

/// Sample variance of `L(1)` with its standard error.
pub fn variance_of_l1(spec: &NoiseSpec, n: u64, seed: u64) -> anyhow::Result<(f64, f64)> {
    let steps = 100;
    let dt = 1.0 / steps as f64;
    let xs = (0..n)
        .map(|i| {
            let path = NoisePath::generate_on_stream(seed, i, spec, dt, steps)?;
            Ok(*path.cumulative().last().expect("non-empty path"))
        })
        .collect::<anyhow::Result<Vec<f64>>>()?;
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let var = m2 * nf / (nf - 1.0);
    Ok((var, ((m4 - m2 * m2) / nf).sqrt()))
}

fn noise_moments() -> anyhow::Result<(bool, String)> {
    let specs = [
        ("brownian sigma = 1", NoiseSpec::brownian(1.0)),
        (
            "sigma = 0.5 + uniform jumps (lambda_N = 2, zeta = 1)",
            NoiseSpec::jump_diffusion(0.5, 2.0, 1.0, JumpLaw::Uniform),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (label, spec)) in specs.iter().enumerate() {
        let (var, se) = variance_of_l1(spec, N_MOMENT_PATHS, 12 + i as u64)?;
        let lambda = spec.qv_rate();
        let z = (var - lambda) / se;
        pass &= z.abs() <= MOMENT_SIGMAS;
        parts.push(format!("{label}: Var = {var:.4} vs {lambda:.4} ({z:+.2} SE)"));
    }
    Ok((pass, parts.join("; ")))
}

fn determinism() -> anyhow::Result<(bool, String)> {
    let base = std::env::temp_dir().join(format!("sdde-determinism-{}", std::process::id()));
    let mut files: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for workers in [1usize, 8] {
        let dir = base.join(format!("w{workers}"));
        let loaded = preset("fig1", &[])?;
        let written = crate::figures(&loaded, &dir, Some(workers))?;
        let mut contents = Vec::new();
        for path in written {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            contents.push((name, std::fs::read(&path)?));
        }
        contents.sort();
        files.push(contents);
    }
    let _ = std::fs::remove_dir_all(&base);
    let names: Vec<&str> = files[0].iter().map(|(n, _)| n.as_str()).collect();
    let same = files[0] == files[1];
    let bytes: usize = files[0].iter().map(|(_, c)| c.len()).sum();
    Ok((
        same && !names.is_empty(),
        format!(
            "{} files ({}) byte-identical for 1 and 8 workers: {same} ({bytes} bytes)",
            names.len(),
            names.join(", ")
        ),
    ))
}
