//! Euler–Maruyama integration of the log-transformed delay equation.
//!
//! The delayed state is read from a ring buffer holding the last `m + 1`
//! grid values (`τ = m·dt`). Jumps are applied at their exact times by
//! splitting the step; the Brownian contribution of a step is spread
//! linearly over its sub-intervals with `b` frozen at the step's left point.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{ModelSpec, BLOW_DOWN_LEVEL};
use crate::noise::{jump_events_on_stream, BrownianSource, JumpEvent, NoisePath, NoiseSpec};

/// Coordinate system of recorded values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// `Y = log X`.
    Transformed,
    /// `X = e^Y`.
    #[default]
    Original,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Initial span excluded from statistics.
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub space: Space,
    #[serde(default = "one")]
    pub record_stride: usize,
    /// Also record the forcing path `v` (auxiliary drift plus noise integral).
    #[serde(default)]
    pub record_forcing: bool,
}

fn one() -> usize {
    1
}

impl TrajectoryConfig {
    /// Defaults: `dt = 10⁻³·τ`, original space, stride 1.
    pub fn for_model(model: &ModelSpec, t_end: f64) -> Self {
        TrajectoryConfig {
            dt: 1e-3 * model.tau,
            t_end,
            burn_in: 0.0,
            seed: 0,
            space: Space::Original,
            record_stride: 1,
            record_forcing: false,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_space(mut self, space: Space) -> Self {
        self.space = space;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_forcing(mut self) -> Self {
        self.record_forcing = true;
        self
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self, tau: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_end) {
            return Err(invalid("burn_in must lie in [0, t_end)"));
        }
        if self.record_stride == 0 {
            return Err(invalid("record_stride must be >= 1"));
        }
        delay_steps(tau, self.dt)?;
        Ok(())
    }
}

/// `m = τ / dt`, required to be a positive integer.
pub fn delay_steps(tau: f64, dt: f64) -> Result<usize> {
    let ratio = tau / dt;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio.max(1.0) {
        return Err(invalid(format!(
            "tau/dt must be integral: tau = {tau}, dt = {dt} gives {ratio}"
        )));
    }
    Ok(m as usize)
}

/// Solution segment on `[t - τ, t]` at grid resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub t: f64,
    pub m: usize,
}

impl Segment {
    pub fn constant(value: f64, m: usize) -> Self {
        Segment {
            values: vec![value; m + 1],
            t: 0.0,
            m,
        }
    }

    /// Linear interpolation of tabulated `(t, value)` samples onto `-τ + i·dt`.
    pub fn from_samples(samples: &[(f64, f64)], tau: f64, dt: f64) -> Result<Self> {
        let m = delay_steps(tau, dt)?;
        if samples.is_empty() {
            return Err(invalid("history needs at least one sample"));
        }
        let mut pts = samples.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let eps = 1e-9 * tau;
        if pts[0].0 > -tau + eps || pts[pts.len() - 1].0 < -eps {
            return Err(invalid(format!("history samples must cover [-{tau}, 0]")));
        }
        let values = (0..=m)
            .map(|i| {
                let t = -tau + i as f64 * dt;
                let k = pts.partition_point(|p| p.0 <= t);
                if k == 0 {
                    pts[0].1
                } else if k == pts.len() {
                    pts[k - 1].1
                } else {
                    let (t0, v0) = pts[k - 1];
                    let (t1, v1) = pts[k];
                    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                }
            })
            .collect();
        Ok(Segment { values, t: 0.0, m })
    }

    /// Reads a `t,value` CSV (with header) covering `[-τ, 0]`.
    pub fn read_csv<R: Read>(reader: R, tau: f64, dt: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| invalid("history CSV needs columns t,value"))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("history CSV: {e}")))
            };
            samples.push((parse(0)?, parse(1)?));
        }
        Self::from_samples(&samples, tau, dt)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Segment {
            values: self.values.iter().map(|&v| f(v)).collect(),
            t: self.t,
            m: self.m,
        }
    }
}

/// Initial data: a constant or a tabulated segment (in the simulated coordinates).
#[derive(Clone, Debug, PartialEq)]
pub enum History {
    Constant(f64),
    Segment(Segment),
}

impl History {
    pub fn to_segment(&self, m: usize) -> Result<Segment> {
        match self {
            History::Constant(v) => Ok(Segment::constant(*v, m)),
            History::Segment(s) if s.values.len() == m + 1 => Ok(s.clone()),
            History::Segment(s) => Err(invalid(format!(
                "history has {} samples, the delay grid needs {}",
                s.values.len(),
                m + 1
            ))),
        }
    }
}

impl From<f64> for History {
    fn from(v: f64) -> Self {
        History::Constant(v)
    }
}

/// A jump as it was applied to the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AppliedJump {
    pub time: f64,
    pub size: f64,
    /// `b(Y_{s-})·z` added to the log-state.
    pub increment: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    /// Time at which the log-state fell below the blow-down level.
    pub blow_down: Option<f64>,
    pub max_value: f64,
    pub min_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Spacing of recorded samples, `record_stride·dt`.
    pub dt_out: f64,
    pub dt: f64,
    pub space: Space,
    /// Recorded values at `t = k·dt_out`, `k = 0, 1, ...`.
    pub values: Vec<f64>,
    /// Forcing path `v(t)` at the recorded times, when requested.
    pub forcing: Option<Vec<f64>>,
    pub jump_log: Vec<AppliedJump>,
    pub seed: u64,
    pub stream: u64,
    pub diagnostics: Diagnostics,
    /// Delay in recorded samples, when `τ` is a multiple of `dt_out`.
    pub delay_samples: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt_out
    }

    pub fn t_last(&self) -> f64 {
        self.time(self.values.len().saturating_sub(1))
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|k| self.time(k))
    }

    pub fn completed(&self) -> bool {
        self.diagnostics.blow_down.is_none()
    }

    /// Values converted to the requested coordinates.
    pub fn values_in(&self, space: Space) -> Vec<f64> {
        match (self.space, space) {
            (a, b) if a == b => self.values.clone(),
            (Space::Transformed, Space::Original) => self.values.iter().map(|y| y.exp()).collect(),
            _ => self.values.iter().map(|x| x.ln()).collect(),
        }
    }

    /// CSV `t,value` with an optional leading comment line.
    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "t,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.time(k), v)?;
        }
        Ok(())
    }
}

/// Long-format `traj_id,t,value` export of an ensemble.
pub fn write_ensemble_csv<W: Write>(
    trajectories: &[Trajectory],
    mut out: W,
    header_comment: Option<&str>,
    t_max: Option<f64>,
) -> Result<()> {
    if let Some(c) = header_comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "traj_id,t,value")?;
    for (i, tr) in trajectories.iter().enumerate() {
        for (k, v) in tr.values.iter().enumerate() {
            let t = tr.time(k);
            if t_max.is_some_and(|m| t > m + 1e-12) {
                break;
            }
            writeln!(out, "{i},{t},{v}")?;
        }
    }
    Ok(())
}

struct Recorder {
    space: Space,
    stride: usize,
    values: Vec<f64>,
    forcing: Option<Vec<f64>>,
    min: f64,
    max: f64,
}

impl Recorder {
    fn new(cfg: &TrajectoryConfig, steps: usize) -> Self {
        let cap = steps / cfg.record_stride + 1;
        Recorder {
            space: cfg.space,
            stride: cfg.record_stride,
            values: Vec::with_capacity(cap),
            forcing: cfg.record_forcing.then(|| Vec::with_capacity(cap)),
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    #[inline]
    fn observe(&mut self, n: usize, y: f64, v: f64) {
        let value = match self.space {
            Space::Transformed => y,
            Space::Original => y.exp(),
        };
        self.min = self.min.min(value);
        self.max = self.max.max(value);
        if n % self.stride == 0 {
            self.values.push(value);
            if let Some(f) = self.forcing.as_mut() {
                f.push(v);
            }
        }
    }
}

/// Core recurrence shared by every entry point.
#[allow(clippy::too_many_arguments)]
fn integrate(
    model: &ModelSpec,
    noise: &NoiseSpec,
    history: &Segment,
    cfg: &TrajectoryConfig,
    increments: &mut dyn Iterator<Item = f64>,
    jumps: &[JumpEvent],
    seed: u64,
    stream: u64,
) -> Result<Trajectory> {
    let m = history.m;
    let dt = cfg.dt;
    let steps = cfg.steps();
    let sigma = noise.sigma;
    let mut ring = history.values.clone();
    let len = m + 1;
    let mut y = ring[m];
    let mut v = 0.0;
    let mut rec = Recorder::new(cfg, steps);
    let mut jump_log = Vec::new();
    let mut next_jump = 0;
    let mut blow_down = None;

    if !y.is_finite() || ring.iter().any(|h| !h.is_finite()) {
        return Err(invalid("history values must be finite"));
    }
    rec.observe(0, y, v);

    for n in 0..steps {
        let t_n = n as f64 * dt;
        let t_next = (n + 1) as f64 * dt;
        let y_delay = ring[n % len];
        let dw = if sigma > 0.0 {
            increments
                .next()
                .ok_or_else(|| Error::Internal("noise path shorter than the horizon".into()))?
        } else {
            // Keep the stream aligned with the step index.
            let _ = increments.next();
            0.0
        };
        let b_left = model.noise.eval(y);
        let diffusion = b_left * sigma * dw;

        if next_jump >= jumps.len() || jumps[next_jump].time > t_next {
            let a = model.aux_drift(y, noise);
            y += (model.feedback_drift(y, y_delay, t_n) + a) * dt + diffusion;
            v += a * dt + diffusion;
        } else {
            let mut s = t_n;
            while next_jump < jumps.len() && jumps[next_jump].time <= t_next {
                let jump = jumps[next_jump];
                let h = jump.time - s;
                if h > 0.0 {
                    let a = model.aux_drift(y, noise);
                    let share = diffusion * (h / dt);
                    y += (model.feedback_drift(y, y_delay, s) + a) * h + share;
                    v += a * h + share;
                }
                let increment = model.noise.eval(y) * jump.size;
                y += increment;
                v += increment;
                jump_log.push(AppliedJump {
                    time: jump.time,
                    size: jump.size,
                    increment,
                });
                s = jump.time;
                next_jump += 1;
            }
            let h = t_next - s;
            if h > 0.0 {
                let a = model.aux_drift(y, noise);
                let share = diffusion * (h / dt);
                y += (model.feedback_drift(y, y_delay, s) + a) * h + share;
                v += a * h + share;
            }
        }

        if y.is_nan() {
            return Err(Error::Internal(format!("NaN state at t = {t_next}")));
        }
        if y < BLOW_DOWN_LEVEL {
            blow_down = Some(t_next);
            break;
        }
        if y == f64::INFINITY {
            return Err(Error::Internal(format!("state overflowed at t = {t_next}")));
        }
        ring[(n + m + 1) % len] = y;
        rec.observe(n + 1, y, v);
    }

    let dt_out = dt * cfg.record_stride as f64;
    let delay_samples = (m % cfg.record_stride == 0).then(|| m / cfg.record_stride);
    Ok(Trajectory {
        dt_out,
        dt,
        space: cfg.space,
        values: rec.values,
        forcing: rec.forcing,
        jump_log,
        seed,
        stream,
        diagnostics: Diagnostics {
            blow_down,
            max_value: rec.max,
            min_value: rec.min,
        },
        delay_samples,
    })
}

fn prepare(model: &ModelSpec, noise: &NoiseSpec, cfg: &TrajectoryConfig) -> Result<usize> {
    model.validate()?;
    noise.validate()?;
    cfg.validate(model.tau)?;
    delay_steps(model.tau, cfg.dt)
}

/// Trajectory `stream` of the ensemble seeded by `cfg.seed`.
pub fn simulate_stream(
    model: &ModelSpec,
    noise: &NoiseSpec,
    history: &History,
    cfg: &TrajectoryConfig,
    stream: u64,
) -> Result<Trajectory> {
    let m = prepare(model, noise, cfg)?;
    let segment = history.to_segment(m)?;
    let jumps = if noise.lambda_n > 0.0 {
        jump_events_on_stream(cfg.seed, stream, noise, cfg.steps() as f64 * cfg.dt)?
    } else {
        Vec::new()
    };
    let mut source = BrownianSource::new(cfg.seed, stream, cfg.dt);
    integrate(model, noise, &segment, cfg, &mut source, &jumps, cfg.seed, stream)
}

/// Simulates the transformed equation from a log-space history.
pub fn simulate_transformed(
    model: &ModelSpec,
    noise: &NoiseSpec,
    history: &History,
    cfg: &TrajectoryConfig,
) -> Result<Trajectory> {
    simulate_stream(model, noise, history, cfg, 0)
}

/// Same as [`simulate_transformed`] from a positive `x`-space history; records `x`.
pub fn simulate_original(
    model: &ModelSpec,
    noise: &NoiseSpec,
    history_x: &History,
    cfg: &TrajectoryConfig,
) -> Result<Trajectory> {
    let log_history = match history_x {
        History::Constant(x) if *x > 0.0 => History::Constant(x.ln()),
        History::Segment(s) if s.values.iter().all(|&x| x > 0.0) => History::Segment(s.map(f64::ln)),
        _ => return Err(invalid("original-space history must be strictly positive")),
    };
    let cfg = cfg.clone().with_space(Space::Original);
    simulate_transformed(model, noise, &log_history, &cfg)
}

/// Drives the solver with a pre-sampled noise path on the same grid.
pub fn simulate_with_path(
    model: &ModelSpec,
    noise: &NoiseSpec,
    history: &History,
    cfg: &TrajectoryConfig,
    path: &NoisePath,
) -> Result<Trajectory> {
    let m = prepare(model, noise, cfg)?;
    if (path.dt - cfg.dt).abs() > 1e-15 * cfg.dt || path.steps() < cfg.steps() {
        return Err(invalid("noise path grid does not match the trajectory grid"));
    }
    let segment = history.to_segment(m)?;
    let mut source = path.brownian_increments.iter().copied();
    integrate(model, noise, &segment, cfg, &mut source, &path.jumps, path.seed, 0)
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// Runs `n_traj` trajectories on streams `0..n_traj` and maps each through `f`.
///
/// Output order follows the stream index, so results do not depend on the
/// number of workers.
pub fn simulate_ensemble_with<T, F>(
    model: &ModelSpec,
    noise: &NoiseSpec,
    history: &History,
    cfg: &TrajectoryConfig,
    n_traj: usize,
    workers: Option<usize>,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, Trajectory) -> Result<T> + Sync,
{
    if n_traj == 0 {
        return Err(invalid("ensemble needs at least one trajectory"));
    }
    prepare(model, noise, cfg)?;
    pool(workers)?.install(|| {
        (0..n_traj as u64)
            .into_par_iter()
            .map(|i| simulate_stream(model, noise, history, cfg, i).and_then(|tr| f(i, tr)))
            .collect()
    })
}

pub fn simulate_ensemble(
    model: &ModelSpec,
    noise: &NoiseSpec,
    history: &History,
    cfg: &TrajectoryConfig,
    n_traj: usize,
    workers: Option<usize>,
) -> Result<Vec<Trajectory>> {
    simulate_ensemble_with(model, noise, history, cfg, n_traj, workers, |_, tr| Ok(tr))
}
