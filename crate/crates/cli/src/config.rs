//! Experiment configuration files, dotted-key overrides and provenance.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdde_core::bounds::{BoundKind, Split, Statistic, TailBoundParams};
use sdde_core::solver::delay_steps;
use sdde_core::{History, MeasureWindow, ModelSpec, NoiseSpec, Segment, Space, TrajectoryConfig};

/// Top-level experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectorySection>,
    #[serde(default)]
    pub history: HistorySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSection>,
    #[serde(default = "one")]
    pub n_trajectories: usize,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathwise: Option<PathwiseSection>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    /// Defaults to `10⁻³·τ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub space: Space,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default)]
    pub record_forcing: bool,
}

/// Constant initial data or a tabulated `t,value` file on `[-τ, 0]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Coordinates of the given values; log space by default.
    #[serde(default = "transformed")]
    pub space: Space,
}

fn transformed() -> Space {
    Space::Transformed
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<f64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    pub range: [f64; 2],
    #[serde(default = "default_phase_bins")]
    pub phase_bins: [usize; 2],
    /// Defaults to `range` on both axes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationarity: Option<StationaritySection>,
}

fn default_bins() -> usize {
    200
}

fn default_phase_bins() -> [usize; 2] {
    [100, 100]
}

/// Splits the measure window into `windows` touching pieces and compares them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaritySection {
    #[serde(default = "two")]
    pub windows: usize,
    pub threshold: f64,
}

fn two() -> usize {
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Timeseries,
    Histogram,
    Phase,
    Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "all_artifacts")]
    pub artifacts: Vec<Artifact>,
    /// Last time written to the time-series file; the whole run when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeseries_end: Option<f64>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn all_artifacts() -> Vec<Artifact> {
    vec![Artifact::Timeseries, Artifact::Histogram, Artifact::Phase, Artifact::Summary]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            artifacts: all_artifacts(),
            timeseries_end: None,
        }
    }
}

/// Tail-bound evaluation for `Y = -αt + β·L` with `L` from the `noise` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub kinds: Vec<BoundKind>,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "unit")]
    pub t_window: f64,
    #[serde(default = "twenty")]
    pub horizon: u32,
    #[serde(default = "unit")]
    pub kappa2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
}

fn unit() -> f64 {
    1.0
}

fn twenty() -> u32 {
    20
}

/// Explicit `R` values, a uniform range, or the informative range of each bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSection {
    Values { r: Vec<f64> },
    Uniform { lo: f64, hi: f64, n: usize },
    Informative { lo_level: f64, n: usize },
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection::Informative {
            lo_level: 1e-3,
            n: 25,
        }
    }
}

impl GridSection {
    pub fn resolve(&self, kind: BoundKind, params: &TailBoundParams) -> anyhow::Result<Vec<f64>> {
        Ok(match self {
            GridSection::Values { r } => r.clone(),
            GridSection::Uniform { lo, hi, n } => {
                let n = (*n).max(2);
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
            GridSection::Informative { lo_level, n } => kind.informative_grid(params, *lo_level, *n)?,
        })
    }
}

/// Monte Carlo check of each bound in `kinds` against its statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "ten_thousand")]
    pub n_samples: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub seed: u64,
    /// Time at which the composite bound's reverse supremum is sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_time: Option<f64>,
}

fn ten_thousand() -> usize {
    10_000
}

fn default_confidence() -> f64 {
    0.99
}

/// Pathwise upper/lower estimate checks on the simulated ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathwiseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_r: Option<f64>,
}

impl BoundsSection {
    pub fn params(&self, noise: &NoiseSpec) -> TailBoundParams {
        TailBoundParams {
            t_window: self.t_window,
            horizon: self.horizon,
            kappa2: self.kappa2,
            split: self.split,
            ..TailBoundParams::from_noise(self.alpha, self.beta, noise)
        }
    }

    /// Statistic whose tail each bound controls.
    pub fn statistic(&self, kind: BoundKind) -> Statistic {
        match kind {
            BoundKind::ReverseSupBrownian | BoundKind::ReverseSupLevy => Statistic::ReverseSup {
                horizon: self.horizon as f64,
            },
            BoundKind::WindowSupBrownian | BoundKind::WindowSupLevy => Statistic::WindowSup {
                length: self.t_window,
            },
            BoundKind::Composite => Statistic::ReverseSup {
                horizon: self
                    .verify
                    .as_ref()
                    .and_then(|v| v.composite_time)
                    .unwrap_or(self.horizon as f64 + 0.5),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub level: Level,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.level {
            Level::Error => "error",
            Level::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// A parsed configuration together with the directory relative paths resolve against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

/// Shipped presets, addressable by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", include_str!("../presets/fig1.toml")),
    ("fig2_p4", include_str!("../presets/fig2_p4.toml")),
    ("fig2_p6", include_str!("../presets/fig2_p6.toml")),
    ("fig2_p8", include_str!("../presets/fig2_p8.toml")),
    ("fig3", include_str!("../presets/fig3.toml")),
    ("reverse_sup_brownian", include_str!("../presets/reverse_sup_brownian.toml")),
    ("window_sup_brownian", include_str!("../presets/window_sup_brownian.toml")),
    ("levy_tail", include_str!("../presets/levy_tail.toml")),
    ("pathwise", include_str!("../presets/pathwise.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses TOML text, applies `key=value` overrides and deserializes.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let mut value: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    ExperimentConfig::deserialize(toml::Value::Table(value)).map_err(|e| anyhow!("config: {e}"))
}

/// Loads a preset name or a file path.
pub fn load(source: &str, overrides: &[String]) -> anyhow::Result<LoadedConfig> {
    if let Some(text) = preset(source) {
        return Ok(LoadedConfig {
            config: parse_with_overrides(text, overrides)?,
            base_dir: std::env::current_dir()?,
        });
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {} (not a preset either)", path.display()))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig {
        config: parse_with_overrides(&text, overrides)?,
        base_dir,
    })
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a bare string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty component");
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(out) = v.get_mut("outputs").and_then(|o| o.as_object_mut()) {
            out.remove("dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line written at the top of every output file.
    pub fn provenance(&self) -> String {
        format!("sdde {} config_hash={}", sdde_core::VERSION, self.hash())
    }

    pub fn model(&self) -> anyhow::Result<&ModelSpec> {
        self.model.as_ref().ok_or_else(|| anyhow!("config has no [model] section"))
    }

    pub fn noise(&self) -> anyhow::Result<&NoiseSpec> {
        self.noise.as_ref().ok_or_else(|| anyhow!("config has no [noise] section"))
    }

    pub fn measure(&self) -> anyhow::Result<&MeasureSection> {
        self.measure.as_ref().ok_or_else(|| anyhow!("config has no [measure] section"))
    }

    /// Seed order: trajectory, then noise, then 0.
    pub fn seed(&self) -> u64 {
        self.trajectory
            .as_ref()
            .and_then(|t| t.seed)
            .or_else(|| self.noise.as_ref().and_then(|n| n.seed))
            .unwrap_or(0)
    }

    pub fn set_seed(&mut self, seed: u64) {
        if let Some(t) = self.trajectory.as_mut() {
            t.seed = Some(seed);
        }
        if let Some(v) = self.bounds.as_mut().and_then(|b| b.verify.as_mut()) {
            v.seed = seed;
        }
    }

    pub fn trajectory_config(&self) -> anyhow::Result<TrajectoryConfig> {
        let model = self.model()?;
        let t = self
            .trajectory
            .as_ref()
            .ok_or_else(|| anyhow!("config has no [trajectory] section"))?;
        let mut cfg = TrajectoryConfig::for_model(model, t.t_end)
            .with_seed(self.seed())
            .with_space(t.space)
            .with_stride(t.record_stride);
        if let Some(dt) = t.dt {
            cfg = cfg.with_dt(dt);
        }
        cfg.burn_in = t.burn_in;
        cfg.record_forcing = t.record_forcing;
        Ok(cfg)
    }

    /// Initial data in log coordinates.
    pub fn history(&self, base_dir: &Path) -> anyhow::Result<History> {
        let model = self.model()?;
        let h = &self.history;
        let to_log = |v: f64| -> anyhow::Result<f64> {
            match h.space {
                Space::Transformed => Ok(v),
                Space::Original if v > 0.0 => Ok(v.ln()),
                Space::Original => bail!("original-space history values must be positive, got {v}"),
            }
        };
        match (h.constant, &h.csv) {
            (Some(c), None) => Ok(History::Constant(to_log(c)?)),
            (None, Some(path)) => {
                let dt = self.trajectory_config()?.dt;
                let full = base_dir.join(path);
                let file = std::fs::File::open(&full)
                    .with_context(|| format!("cannot open history file {}", full.display()))?;
                let seg = Segment::read_csv(file, model.tau, dt)?;
                if h.space == Space::Original && seg.values.iter().any(|&v| !(v > 0.0)) {
                    bail!("original-space history values must be positive");
                }
                Ok(History::Segment(match h.space {
                    Space::Transformed => seg,
                    Space::Original => seg.map(f64::ln),
                }))
            }
            (None, None) => Ok(History::Constant(0.0)),
            (Some(_), Some(_)) => bail!("history: give either `constant` or `csv`, not both"),
        }
    }

    pub fn window(&self) -> anyhow::Result<MeasureWindow> {
        let m = self.measure()?;
        let w = MeasureWindow::between(m.start, m.end);
        Ok(match m.stride {
            Some(s) => w.with_stride(s),
            None => w,
        })
    }

    /// All cross-field checks; an empty list means the config is usable.
    pub fn diagnostics(&self, base_dir: &Path) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut err = |m: String| {
            out.push(Diagnostic {
                level: Level::Error,
                message: m,
            })
        };
        if let Some(model) = &self.model {
            if let Err(e) = model.validate() {
                err(format!("model: {e}"));
            }
            match &self.noise {
                None => err("a [model] needs a [noise] section".into()),
                Some(n) => {
                    if let Err(e) = n.validate() {
                        err(format!("noise: {e}"));
                    }
                }
            }
            match self.trajectory_config() {
                Err(e) => err(format!("trajectory: {e}")),
                Ok(cfg) => {
                    if let Err(e) = cfg.validate(model.tau) {
                        err(format!("trajectory: {e}"));
                    }
                    if let Err(e) = self.history(base_dir) {
                        err(format!("history: {e}"));
                    }
                    if let Some(m) = &self.measure {
                        check_measure(m, model, &cfg, &mut err);
                    }
                    if let Some(end) = self.outputs.timeseries_end {
                        if !(end >= 0.0) {
                            err(format!("outputs.timeseries_end must be >= 0, got {end}"));
                        }
                    }
                }
            }
            if self.n_trajectories == 0 {
                err("n_trajectories must be >= 1".into());
            }
            if let Some(p) = &self.pathwise {
                if p.upper_r.is_none() && p.lower_r.is_none() {
                    err("pathwise: set upper_r and/or lower_r".into());
                }
            }
        } else if self.trajectory.is_some() || self.measure.is_some() || self.pathwise.is_some() {
            err("trajectory/measure/pathwise sections need a [model] section".into());
        }
        if let Some(b) = &self.bounds {
            let noise = self.noise.clone().unwrap_or_else(|| NoiseSpec::brownian(1.0));
            check_bounds(b, &noise, &mut out);
        }
        if self.model.is_none() && self.bounds.is_none() {
            out.push(Diagnostic {
                level: Level::Error,
                message: "config has neither a [model] nor a [bounds] section".into(),
            });
        }
        out
    }
}

fn check_measure(m: &MeasureSection, model: &ModelSpec, cfg: &TrajectoryConfig, err: &mut impl FnMut(String)) {
    let dt_out = cfg.dt * cfg.record_stride as f64;
    let horizon = cfg.steps() as f64 * cfg.dt;
    if !(m.start >= 0.0 && m.end > m.start) {
        err(format!("measure window [{}, {}] is empty or starts before 0", m.start, m.end));
    }
    if m.end > horizon * (1.0 + 1e-12) {
        err(format!("measure window end {} exceeds t_end = {horizon}", m.end));
    }
    if m.start < cfg.burn_in {
        err(format!("measure window starts inside the burn-in period ({})", cfg.burn_in));
    }
    for (what, t) in [("start", m.start), ("end", m.end)] {
        let k = (t / dt_out).round();
        if (k * dt_out - t).abs() > 1e-6 * dt_out {
            err(format!("measure window {what} {t} is not on the recorded grid (spacing {dt_out})"));
        }
    }
    if m.bins == 0 || m.phase_bins.contains(&0) {
        err("bin counts must be >= 1".into());
    }
    if !(m.range[0] < m.range[1]) {
        err(format!("measure range [{}, {}] is empty", m.range[0], m.range[1]));
    }
    if let Some(r) = m.phase_range {
        if !(r[0] < r[1]) {
            err(format!("phase range [{}, {}] is empty", r[0], r[1]));
        }
    }
    if m.start < model.tau {
        err(format!("phase portraits need the window to start at or after tau = {}", model.tau));
    }
    let delay = model.tau / dt_out;
    if (delay - delay.round()).abs() > 1e-9 * delay.max(1.0) {
        err("record_stride must divide tau/dt for phase portraits".into());
    }
    if let Some(s) = &m.stationarity {
        if s.windows < 2 {
            err("stationarity needs at least two windows".into());
        }
        if !(s.threshold > 0.0) {
            err("stationarity threshold must be positive".into());
        }
    }
    let _ = delay_steps(model.tau, cfg.dt).map_err(|e| err(format!("trajectory: {e}")));
}

fn check_bounds(b: &BoundsSection, noise: &NoiseSpec, out: &mut Vec<Diagnostic>) {
    let params = b.params(noise);
    if let Err(e) = noise.validate() {
        out.push(Diagnostic {
            level: Level::Error,
            message: format!("noise: {e}"),
        });
    }
    if let Err(e) = params.validate() {
        out.push(Diagnostic {
            level: Level::Error,
            message: format!("bounds: {e}"),
        });
        return;
    }
    if b.kinds.is_empty() {
        out.push(Diagnostic {
            level: Level::Error,
            message: "bounds.kinds is empty".into(),
        });
    }
    let levy = b
        .kinds
        .iter()
        .any(|k| matches!(k, BoundKind::ReverseSupLevy | BoundKind::Composite));
    if levy && params.jump_load() > 0.0 && params.alpha <= params.jump_load() {
        out.push(Diagnostic {
            level: Level::Error,
            message: format!(
                "bounds: the jump bounds require alpha > lambda_n*zeta*beta; alpha = {}, lambda_n*zeta*beta = {}",
                params.alpha,
                params.jump_load()
            ),
        });
        return;
    }
    for kind in &b.kinds {
        match b.grid.resolve(*kind, &params) {
            Err(e) => out.push(Diagnostic {
                level: Level::Error,
                message: format!("bounds: {kind:?}: {e}"),
            }),
            Ok(_) => {
                if let Ok(r1) = kind.threshold(&params, 1.0) {
                    if r1 > 100.0 {
                        out.push(Diagnostic {
                            level: Level::Warning,
                            message: format!("bounds: {kind:?} is vacuous (>= 1) for R < {r1:.4}"),
                        });
                    }
                }
            }
        }
    }
    if let Some(v) = &b.verify {
        if v.n_samples == 0 || !(v.confidence > 0.0 && v.confidence < 1.0) {
            out.push(Diagnostic {
                level: Level::Error,
                message: "bounds.verify needs n_samples >= 1 and confidence in (0, 1)".into(),
            });
        }
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.level == Level::Error)
}
