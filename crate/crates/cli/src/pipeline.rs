//! Ensemble runs reduced to histograms, phase portraits and summaries, and
//! the writers for every command's output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use sdde_core::analysis::{stability_report, StabilityReport};
use sdde_core::bounds::{
    check_pathwise_lower, check_pathwise_upper, mc_verify_tail_bound, ultimate_mean_bound, BoundCurve,
    EstimateCheckParams, PathwiseReport, SyntheticProcess, VerificationReport,
};
use sdde_core::measure::{measure_distance, Axis, StationarityReport};
use sdde_core::solver::{delay_steps, simulate_ensemble_with};
use sdde_core::{Histogram1D, Histogram2D, MeasureWindow, NoiseSpec, Space, Trajectory};

use crate::config::{ExperimentConfig, LoadedConfig};

/// Which reductions an ensemble run should produce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Products {
    pub timeseries: bool,
    pub histogram: bool,
    pub phase: bool,
    pub pathwise: bool,
}

impl Products {
    pub fn all() -> Self {
        Products {
            timeseries: true,
            histogram: true,
            phase: true,
            pathwise: false,
        }
    }
}

/// Per-trajectory reduction.
#[derive(Clone, Debug)]
struct PathOutput {
    timeseries: Vec<f64>,
    histogram: Option<Histogram1D>,
    pieces: Vec<Histogram1D>,
    phase: Option<Histogram2D>,
    window_sum: f64,
    window_count: u64,
    samples: u64,
    nonpositive: u64,
    min_x: f64,
    max_x: f64,
    blow_down: Option<f64>,
    upper: Option<PathwiseReport>,
    lower: Option<PathwiseReport>,
}

/// Reduced result of an ensemble run.
#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub provenance: String,
    pub space: Space,
    pub dt_out: f64,
    /// History samples on `[-τ, 0)` in the recorded coordinates.
    pub history_prefix: Vec<f64>,
    pub timeseries: Vec<Vec<f64>>,
    pub histogram: Option<Histogram1D>,
    pub stationarity: Option<StationarityReport>,
    pub phase: Option<Histogram2D>,
    /// Time-and-ensemble mean of `X` over the measure window.
    pub window_mean_x: Option<f64>,
    pub ultimate_mean_bound: f64,
    /// Original-space samples over all trajectories and times.
    pub samples: u64,
    pub nonpositive: u64,
    pub min_x: f64,
    pub max_x: f64,
    /// `(trajectory, time)` of every blow-down.
    pub blow_downs: Vec<(usize, f64)>,
    pub upper: Option<PathwiseReport>,
    pub lower: Option<PathwiseReport>,
}

impl EnsembleResult {
    /// Lower edge of the first non-empty histogram bin.
    pub fn support_lower_edge(&self) -> Option<f64> {
        let h = self.histogram.as_ref()?;
        if h.below > 0 {
            return Some(f64::NEG_INFINITY);
        }
        let i = h.counts.iter().position(|&c| c > 0)?;
        Some(h.axis.edges()[i])
    }
}

fn to_x(space: Space, v: f64) -> f64 {
    match space {
        Space::Original => v,
        Space::Transformed => v.exp(),
    }
}

pub fn run_ensemble(
    loaded: &LoadedConfig,
    workers: Option<usize>,
    products: Products,
) -> anyhow::Result<EnsembleResult> {
    let cfg = &loaded.config;
    let model = cfg.model()?;
    let noise = cfg.noise()?;
    let mut tcfg = cfg.trajectory_config()?;
    if products.pathwise {
        tcfg.record_forcing = true;
    }
    tcfg.validate(model.tau)?;
    let history = cfg.history(&loaded.base_dir)?;
    let m = delay_steps(model.tau, tcfg.dt)?;
    let stride = tcfg.record_stride;
    let space = tcfg.space;
    let dt_out = tcfg.dt * stride as f64;

    let measure = if products.histogram || products.phase {
        Some(cfg.measure()?)
    } else {
        cfg.measure.as_ref()
    };
    let window = measure.map(|_| cfg.window()).transpose()?;
    let pieces: Vec<MeasureWindow> = match measure.and_then(|m| m.stationarity.as_ref().map(|s| (m, s))) {
        Some((m, s)) if products.histogram => MeasureWindow::split(m.start, m.end, s.windows),
        _ => Vec::new(),
    };
    let ts_end = cfg.outputs.timeseries_end.unwrap_or(f64::INFINITY);

    let pathwise = if products.pathwise {
        let p = cfg
            .pathwise
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("config has no [pathwise] section"))?;
        Some((
            p.upper_r.map(|r| EstimateCheckParams::from_model(model, noise, r)),
            p.lower_r.map(|r| EstimateCheckParams::from_model(model, noise, r)),
        ))
    } else {
        None
    };

    let outputs = simulate_ensemble_with(model, noise, &history, &tcfg, cfg.n_trajectories, workers, |_, tr| {
        reduce(&tr, space, ts_end, measure, window.as_ref(), &pieces, products, pathwise.as_ref())
            .map_err(|e| sdde_core::Error::InvalidArgument(format!("{e:#}")))
    })?;

    let history_prefix = {
        let seg = history.to_segment(m)?;
        seg.values[..m]
            .iter()
            .step_by(stride)
            .map(|&y| match space {
                Space::Transformed => y,
                Space::Original => y.exp(),
            })
            .collect()
    };
    Ok(combine(cfg, outputs, space, dt_out, history_prefix, &pieces, ultimate_mean_bound(model)))
}

#[allow(clippy::too_many_arguments)]
fn reduce(
    tr: &Trajectory,
    space: Space,
    ts_end: f64,
    measure: Option<&crate::config::MeasureSection>,
    window: Option<&MeasureWindow>,
    pieces: &[MeasureWindow],
    products: Products,
    pathwise: Option<&(Option<EstimateCheckParams>, Option<EstimateCheckParams>)>,
) -> anyhow::Result<PathOutput> {
    let mut out = PathOutput {
        timeseries: Vec::new(),
        histogram: None,
        pieces: Vec::new(),
        phase: None,
        window_sum: 0.0,
        window_count: 0,
        samples: tr.len() as u64,
        nonpositive: 0,
        min_x: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        blow_down: tr.diagnostics.blow_down,
        upper: None,
        lower: None,
    };
    for &v in &tr.values {
        let x = to_x(space, v);
        if !(x > 0.0) {
            out.nonpositive += 1;
        }
        out.min_x = out.min_x.min(x);
        out.max_x = out.max_x.max(x);
    }
    if products.timeseries {
        out.timeseries = tr
            .values
            .iter()
            .enumerate()
            .take_while(|(k, _)| tr.time(*k) <= ts_end + 1e-9 * tr.dt_out)
            .map(|(_, &v)| v)
            .collect();
    }
    // Windows of a blown-down path may run past its end; it is reported instead.
    if !tr.completed() {
        return Ok(out);
    }
    if let (Some(m), Some(w)) = (measure, window) {
        let mut h = Histogram1D::new(m.range[0], m.range[1], m.bins)?;
        h.add_trajectory(tr, w)?;
        if products.histogram {
            for p in pieces {
                let mut ph = Histogram1D::new(m.range[0], m.range[1], m.bins)?;
                ph.add_trajectory(tr, p)?;
                out.pieces.push(ph);
            }
        }
        let (first, step, count) = w.indices(tr)?;
        out.window_count = count as u64;
        out.window_sum = (0..count).map(|k| to_x(space, tr.values[first + k * step])).sum();
        if products.histogram {
            out.histogram = Some(h);
        }
        if products.phase {
            let pr = m.phase_range.unwrap_or(m.range);
            let mut ph = Histogram2D::new(
                Axis::new(m.range[0], m.range[1], m.phase_bins[0])?,
                Axis::new(pr[0], pr[1], m.phase_bins[1])?,
            );
            sdde_core::measure::add_phase_pairs(&mut ph, tr, w)?;
            out.phase = Some(ph);
        }
    }
    if let Some((up, lo)) = pathwise {
        if let Some(p) = up {
            out.upper = Some(check_pathwise_upper(tr, p)?);
        }
        if let Some(p) = lo {
            out.lower = Some(check_pathwise_lower(tr, p)?);
        }
    }
    Ok(out)
}

fn combine(
    cfg: &ExperimentConfig,
    outputs: Vec<PathOutput>,
    space: Space,
    dt_out: f64,
    history_prefix: Vec<f64>,
    pieces: &[MeasureWindow],
    umb: f64,
) -> EnsembleResult {
    let mut res = EnsembleResult {
        provenance: cfg.provenance(),
        space,
        dt_out,
        history_prefix,
        timeseries: Vec::with_capacity(outputs.len()),
        histogram: None,
        stationarity: None,
        phase: None,
        window_mean_x: None,
        ultimate_mean_bound: umb,
        samples: 0,
        nonpositive: 0,
        min_x: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        blow_downs: Vec::new(),
        upper: None,
        lower: None,
    };
    let mut piece_hists: Vec<Histogram1D> = Vec::new();
    let (mut wsum, mut wcount) = (0.0, 0u64);
    for (i, o) in outputs.into_iter().enumerate() {
        res.samples += o.samples;
        res.nonpositive += o.nonpositive;
        res.min_x = res.min_x.min(o.min_x);
        res.max_x = res.max_x.max(o.max_x);
        if let Some(t) = o.blow_down {
            res.blow_downs.push((i, t));
        }
        res.timeseries.push(o.timeseries);
        wsum += o.window_sum;
        wcount += o.window_count;
        merge_into(&mut res.histogram, o.histogram, |a, b| a.merge(&b));
        merge_into(&mut res.phase, o.phase, |a, b| a.merge(&b));
        if piece_hists.is_empty() {
            piece_hists = o.pieces;
        } else {
            for (a, b) in piece_hists.iter_mut().zip(&o.pieces) {
                a.merge(b).expect("identical binning");
            }
        }
        merge_into(&mut res.upper, o.upper, |a, b| {
            a.merge(&b);
            Ok(())
        });
        merge_into(&mut res.lower, o.lower, |a, b| {
            a.merge(&b);
            Ok(())
        });
    }
    if wcount > 0 {
        res.window_mean_x = Some(wsum / wcount as f64);
    }
    if piece_hists.len() >= 2 {
        let threshold = cfg
            .measure
            .as_ref()
            .and_then(|m| m.stationarity.as_ref())
            .map_or(f64::INFINITY, |s| s.threshold);
        let mut distances = Vec::new();
        for i in 0..piece_hists.len() {
            for j in i + 1..piece_hists.len() {
                let d = measure_distance(&piece_hists[i], &piece_hists[j]).expect("identical binning");
                distances.push((i, j, d));
            }
        }
        let max_distance = distances.iter().map(|d| d.2).fold(0.0, f64::max);
        res.stationarity = Some(StationarityReport {
            windows: pieces.to_vec(),
            distances,
            max_distance,
            threshold,
            pass: max_distance < threshold,
        });
    }
    res
}

fn merge_into<T>(acc: &mut Option<T>, next: Option<T>, f: impl FnOnce(&mut T, T) -> sdde_core::Result<()>) {
    match (acc.as_mut(), next) {
        (_, None) => {}
        (None, Some(n)) => *acc = Some(n),
        (Some(a), Some(n)) => f(a, n).expect("identical binning"),
    }
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

/// `traj_id,t,value` including the history on `[-τ, 0)`.
pub fn write_timeseries(res: &EnsembleResult, dir: &Path) -> anyhow::Result<PathBuf> {
    let mut out = create(dir, "timeseries.csv")?;
    writeln!(out, "# {}", res.provenance)?;
    writeln!(out, "traj_id,t,value")?;
    let n_hist = res.history_prefix.len();
    for (i, series) in res.timeseries.iter().enumerate() {
        for (k, v) in res.history_prefix.iter().enumerate() {
            let t = -((n_hist - k) as f64) * res.dt_out;
            writeln!(out, "{i},{t},{v}")?;
        }
        for (k, v) in series.iter().enumerate() {
            writeln!(out, "{i},{},{v}", k as f64 * res.dt_out)?;
        }
    }
    out.flush()?;
    Ok(dir.join("timeseries.csv"))
}

pub fn write_histogram(res: &EnsembleResult, dir: &Path) -> anyhow::Result<PathBuf> {
    let h = res
        .histogram
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("no histogram was computed (all trajectories blew down?)"))?;
    let mut out = create(dir, "histogram.csv")?;
    h.write_csv(&mut out, Some(&res.provenance))?;
    out.flush()?;
    Ok(dir.join("histogram.csv"))
}

pub fn write_phase(res: &EnsembleResult, dir: &Path) -> anyhow::Result<PathBuf> {
    let h = res
        .phase
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("no phase portrait was computed (all trajectories blew down?)"))?;
    let mut out = create(dir, "phase.csv")?;
    h.write_csv(&mut out, Some(&res.provenance))?;
    out.flush()?;
    Ok(dir.join("phase.csv"))
}

pub fn write_stationarity(res: &EnsembleResult, dir: &Path) -> anyhow::Result<Option<PathBuf>> {
    let Some(s) = &res.stationarity else {
        return Ok(None);
    };
    let mut out = create(dir, "stationarity.csv")?;
    writeln!(out, "# {}", res.provenance)?;
    writeln!(out, "window_i,window_j,l1_distance")?;
    for (i, j, d) in &s.distances {
        writeln!(out, "{i},{j},{d}")?;
    }
    writeln!(
        out,
        "# summary: {} (max {} vs threshold {})",
        if s.pass { "PASS" } else { "FAIL" },
        s.max_distance,
        s.threshold
    )?;
    out.flush()?;
    Ok(Some(dir.join("stationarity.csv")))
}

/// Plain `key = value` summary.
pub fn summary_text(res: &EnsembleResult) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    kv("n_trajectories", res.timeseries.len().to_string());
    kv("completed", (res.timeseries.len() - res.blow_downs.len()).to_string());
    kv(
        "blow_downs",
        format!(
            "[{}]",
            res.blow_downs
                .iter()
                .map(|(i, t)| format!("{{ traj = {i}, t = {t} }}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
    kv("samples", res.samples.to_string());
    kv("nonpositive_samples", res.nonpositive.to_string());
    kv("min_x", res.min_x.to_string());
    kv("max_x", res.max_x.to_string());
    if let Some(m) = res.window_mean_x {
        kv("window_mean_x", m.to_string());
    }
    kv("ultimate_mean_bound", res.ultimate_mean_bound.to_string());
    if let Some(h) = &res.histogram {
        kv("histogram_samples", h.n_samples.to_string());
        kv("histogram_out_of_range", h.out_of_range().to_string());
    }
    if let Some(e) = res.support_lower_edge() {
        kv("support_lower_edge", e.to_string());
    }
    if let Some(st) = &res.stationarity {
        kv("stationarity_max_distance", st.max_distance.to_string());
        kv("stationarity_pass", st.pass.to_string());
    }
    for (name, rep) in [("upper", &res.upper), ("lower", &res.lower)] {
        if let Some(r) = rep {
            kv(&format!("pathwise_{name}_checked"), r.checked.to_string());
            kv(&format!("pathwise_{name}_violations"), r.violations.len().to_string());
            kv(&format!("pathwise_{name}_max_overshoot"), r.max_overshoot.to_string());
        }
    }
    s
}

pub fn write_summary(res: &EnsembleResult, dir: &Path) -> anyhow::Result<PathBuf> {
    let mut out = create(dir, "summary.txt")?;
    writeln!(out, "# {}", res.provenance)?;
    out.write_all(summary_text(res).as_bytes())?;
    out.flush()?;
    Ok(dir.join("summary.txt"))
}

/// Stability report as TOML.
pub fn stability(cfg: &ExperimentConfig, n_roots: usize) -> anyhow::Result<StabilityReport> {
    Ok(stability_report(cfg.model()?, n_roots)?)
}

pub fn stability_text(rep: &StabilityReport) -> String {
    let c = |z: &sdde_core::analysis::Complex64| format!("{:+.12} {:+.12}i", z.re, z.im);
    let mut s = String::new();
    s.push_str(&format!(
        "steady states: [{}]\n",
        rep.steady_states.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(", ")
    ));
    match rep.x_star {
        Some(x) => s.push_str(&format!("x_*: {x:.12}\n")),
        None => s.push_str("x_*: none\n"),
    }
    s.push_str(&format!("theta = r f'(0) - gamma: {:.12}\n", rep.theta));
    s.push_str(&format!("leading root at 0: {}\n", c(&rep.lambda_0)));
    if let Some(l) = &rep.lambda_star {
        s.push_str(&format!("leading root at x_*: {}\n", c(l)));
    }
    match rep.tau_0 {
        Some(t) => s.push_str(&format!("hopf threshold tau_0: {t:.12}\n")),
        None => s.push_str("hopf threshold tau_0: none\n"),
    }
    if let Some(r) = rep.regime {
        s.push_str(&format!("regime: {r}\n"));
    }
    if let Some(g) = rep.global_periodic_condition {
        s.push_str(&format!("global periodic-orbit condition: {g}\n"));
    }
    s.push_str("roots at 0:\n");
    for z in &rep.roots {
        s.push_str(&format!("  {}\n", c(z)));
    }
    s
}

pub fn write_stability_toml(rep: &StabilityReport, provenance: &str, path: &Path) -> anyhow::Result<()> {
    let body = toml::to_string(rep).context("stability report does not serialize")?;
    std::fs::write(path, format!("# {provenance}\n{body}"))
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn bound_curves(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let b = cfg
        .bounds
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [bounds] section"))?;
    let noise = bounds_noise(cfg);
    let params = b.params(&noise);
    let mut files = Vec::new();
    for kind in &b.kinds {
        let grid = b.grid.resolve(*kind, &params)?;
        let curve = BoundCurve::evaluate(*kind, &params, &grid)?;
        let name = format!("bound_{}.csv", kind_name(*kind));
        let mut out = create(dir, &name)?;
        curve.write_csv(&mut out, Some(&cfg.provenance()))?;
        out.flush()?;
        files.push(dir.join(name));
    }
    Ok(files)
}

pub fn bounds_noise(cfg: &ExperimentConfig) -> NoiseSpec {
    cfg.noise.clone().unwrap_or_else(|| NoiseSpec::brownian(1.0))
}

pub fn kind_name(kind: sdde_core::BoundKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{kind:?}"))
}

/// Monte Carlo verification of every configured bound.
pub fn verify_bounds(
    cfg: &ExperimentConfig,
    workers: Option<usize>,
) -> anyhow::Result<Vec<(sdde_core::BoundKind, VerificationReport)>> {
    let b = cfg
        .bounds
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [bounds] section"))?;
    let v = b
        .verify
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [bounds.verify] section"))?;
    let noise = bounds_noise(cfg);
    let params = b.params(&noise);
    let process = SyntheticProcess {
        alpha: b.alpha,
        beta: b.beta,
        noise: noise.clone(),
    };
    let mut reports = Vec::new();
    for kind in &b.kinds {
        let grid = b.grid.resolve(*kind, &params)?;
        let eval = |r: f64| kind.evaluate(&params, r).map(|v| v.total);
        let rep = mc_verify_tail_bound(
            &process,
            b.statistic(*kind),
            &eval,
            &grid,
            v.n_samples,
            v.seed,
            v.confidence,
            workers,
        )?;
        reports.push((*kind, rep));
    }
    Ok(reports)
}

pub fn write_verification(
    cfg: &ExperimentConfig,
    reports: &[(sdde_core::BoundKind, VerificationReport)],
    dir: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for (kind, rep) in reports {
        let name = format!("verify_{}.csv", kind_name(*kind));
        let mut out = create(dir, &name)?;
        rep.write_csv(&mut out, Some(&cfg.provenance()))?;
        out.flush()?;
        files.push(dir.join(name));
    }
    Ok(files)
}
