//! Brownian and regulated Lévy (jump-diffusion) noise.
//!
//! The driving process is `L(t) = σ W(t) + Σ_{k ≤ N(t)} Z_k` with `N` a
//! Poisson process of intensity `λ_N` and jump sizes bounded by `ζ`. No
//! continuous drift is generated; any compensation belongs to the model's
//! drift term.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{invalid, Result};
use crate::rng::{stream_rng, Channel};

/// Distribution of the jump sizes `Z_k`, always supported in `[-ζ, ζ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLaw {
    /// Uniform on `[-ζ, ζ]`.
    Uniform,
    /// `+ζ` with probability `p_plus`, `-ζ` otherwise.
    TwoPoint { p_plus: f64 },
    /// Centred Gaussian with standard deviation `scale·ζ`, truncated to `[-ζ, ζ]`.
    TruncatedGaussian { scale: f64 },
}

impl Default for JumpLaw {
    fn default() -> Self {
        JumpLaw::Uniform
    }
}

impl JumpLaw {
    /// Symmetric two-point law `±ζ`.
    pub fn symmetric_two_point() -> Self {
        JumpLaw::TwoPoint { p_plus: 0.5 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            JumpLaw::Uniform => Ok(()),
            JumpLaw::TwoPoint { p_plus } if (0.0..=1.0).contains(&p_plus) => Ok(()),
            JumpLaw::TwoPoint { p_plus } => Err(invalid(format!(
                "two-point law needs p_plus in [0, 1], got {p_plus}"
            ))),
            JumpLaw::TruncatedGaussian { scale } if scale > 0.0 && scale.is_finite() => Ok(()),
            JumpLaw::TruncatedGaussian { scale } => Err(invalid(format!(
                "truncated Gaussian needs a positive scale, got {scale}"
            ))),
        }
    }

    /// `E Z₁` for jump bound `zeta`.
    pub fn mean(&self, zeta: f64) -> f64 {
        match *self {
            JumpLaw::Uniform | JumpLaw::TruncatedGaussian { .. } => 0.0,
            JumpLaw::TwoPoint { p_plus } => (2.0 * p_plus - 1.0) * zeta,
        }
    }

    /// `E Z₁²` for jump bound `zeta`.
    pub fn second_moment(&self, zeta: f64) -> f64 {
        match *self {
            JumpLaw::Uniform => zeta * zeta / 3.0,
            JumpLaw::TwoPoint { .. } => zeta * zeta,
            JumpLaw::TruncatedGaussian { scale } => {
                if zeta == 0.0 {
                    return 0.0;
                }
                // Var of N(0, s²) truncated to [-c s, c s]: s²(1 - 2cφ(c) / (2Φ(c) - 1)).
                let s = scale * zeta;
                let c = 1.0 / scale;
                let phi = (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let mass = erf(c / std::f64::consts::SQRT_2);
                s * s * (1.0 - 2.0 * c * phi / mass)
            }
        }
    }

    /// `E[Z₁; |Z₁| ≤ 1]`, the small-jump part entering the Lévy drift coupling.
    pub fn unit_ball_mean(&self, zeta: f64) -> f64 {
        match *self {
            JumpLaw::Uniform | JumpLaw::TruncatedGaussian { .. } => 0.0,
            JumpLaw::TwoPoint { .. } if zeta <= 1.0 => self.mean(zeta),
            JumpLaw::TwoPoint { .. } => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, zeta: f64, rng: &mut R) -> f64 {
        match *self {
            JumpLaw::Uniform => zeta * (2.0 * rng.random::<f64>() - 1.0),
            JumpLaw::TwoPoint { p_plus } => {
                if rng.random::<f64>() < p_plus {
                    zeta
                } else {
                    -zeta
                }
            }
            JumpLaw::TruncatedGaussian { scale } => loop {
                let g: f64 = rng.sample(StandardNormal);
                let z = g * scale * zeta;
                if z.abs() <= zeta {
                    break z;
                }
            },
        }
    }
}

/// Noise specification: a regulated Lévy process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Brownian scale σ (per √time).
    #[serde(default)]
    pub sigma: f64,
    /// Poisson jump intensity λ_N.
    #[serde(default)]
    pub lambda_n: f64,
    /// Maximal jump height ζ.
    #[serde(default)]
    pub zeta: f64,
    #[serde(default)]
    pub jump_law: JumpLaw,
    /// Asserts `E Z₁ = 0`; rejected at validation if the law is not centred.
    #[serde(default)]
    pub centered: bool,
    /// Fallback base seed when the trajectory configuration does not set one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::brownian(1.0)
    }
}

/// Noise class of a specification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseClass {
    /// Square integrable, finite intensity.
    HJudi,
    /// Regulated: no continuous drift, bounded jumps.
    HReg,
    /// Regulated martingale.
    HRegM,
}

impl std::fmt::Display for NoiseClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NoiseClass::HJudi => "HJudi",
            NoiseClass::HReg => "HReg",
            NoiseClass::HRegM => "HRegM",
        };
        f.write_str(s)
    }
}

impl NoiseSpec {
    /// Pure Brownian noise `σ W`.
    pub fn brownian(sigma: f64) -> Self {
        NoiseSpec {
            sigma,
            lambda_n: 0.0,
            zeta: 0.0,
            jump_law: JumpLaw::Uniform,
            centered: true,
            seed: None,
        }
    }

    /// Brownian part plus compound Poisson jumps.
    pub fn jump_diffusion(sigma: f64, lambda_n: f64, zeta: f64, jump_law: JumpLaw) -> Self {
        NoiseSpec {
            sigma,
            lambda_n,
            zeta,
            jump_law,
            centered: jump_law.mean(zeta) == 0.0,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma", self.sigma),
            ("lambda_n", self.lambda_n),
            ("zeta", self.zeta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("noise.{name} must be finite and >= 0, got {v}")));
            }
        }
        self.jump_law.validate()?;
        if self.centered && self.jump_law.mean(self.zeta) != 0.0 {
            return Err(invalid(format!(
                "noise.centered is set but the jump law has mean {}",
                self.jump_law.mean(self.zeta)
            )));
        }
        Ok(())
    }

    pub fn mean_jump(&self) -> f64 {
        self.jump_law.mean(self.zeta)
    }

    pub fn second_moment_jump(&self) -> f64 {
        self.jump_law.second_moment(self.zeta)
    }

    /// `λ = σ² + λ_N E Z₁²`, the rate of the predictable quadratic variation.
    pub fn qv_rate(&self) -> f64 {
        self.sigma * self.sigma + self.lambda_n * self.second_moment_jump()
    }

    /// True when there is a jump component with non-zero size.
    pub fn has_jumps(&self) -> bool {
        self.lambda_n > 0.0 && self.zeta > 0.0
    }
}

/// One jump of the compound Poisson part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub size: f64,
}

/// Closed-form moments of `L(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevyMoments {
    pub mean: f64,
    pub variance: f64,
    /// `⟨L⟩(t) = λ t`.
    pub predictable_qv: f64,
}

pub fn levy_moments(spec: &NoiseSpec, t: f64) -> LevyMoments {
    let mean = spec.lambda_n * spec.mean_jump() * t;
    let qv = spec.qv_rate() * t;
    LevyMoments {
        mean,
        variance: qv,
        predictable_qv: qv,
    }
}

pub fn classify_noise(spec: &NoiseSpec) -> NoiseClass {
    if spec.lambda_n == 0.0 || spec.centered || spec.mean_jump() == 0.0 {
        NoiseClass::HRegM
    } else {
        NoiseClass::HReg
    }
}

/// Standard Brownian increments `ΔW ~ N(0, dt)` on stream `(seed, 0)`.
pub fn sample_brownian_increments(seed: u64, dt: f64, n: usize) -> Result<Vec<f64>> {
    brownian_increments_on_stream(seed, 0, dt, n)
}

pub fn brownian_increments_on_stream(seed: u64, stream: u64, dt: f64, n: usize) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    Ok(BrownianSource::new(seed, stream, dt).take(n).collect())
}

/// Endless stream of `N(0, dt)` increments.
pub struct BrownianSource {
    rng: rand_chacha::ChaCha8Rng,
    sqrt_dt: f64,
}

impl BrownianSource {
    pub fn new(seed: u64, stream: u64, dt: f64) -> Self {
        BrownianSource {
            rng: stream_rng(seed, stream, Channel::Brownian),
            sqrt_dt: dt.sqrt(),
        }
    }
}

impl Iterator for BrownianSource {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        let g: f64 = self.rng.sample(StandardNormal);
        Some(g * self.sqrt_dt)
    }
}

/// Jumps on `(0, horizon]` for stream `(seed, 0)`.
pub fn sample_jump_events(seed: u64, spec: &NoiseSpec, horizon: f64) -> Result<Vec<JumpEvent>> {
    jump_events_on_stream(seed, 0, spec, horizon)
}

/// Exact compound Poisson sampling: Poisson count, uniform times, sorted.
pub fn jump_events_on_stream(
    seed: u64,
    stream: u64,
    spec: &NoiseSpec,
    horizon: f64,
) -> Result<Vec<JumpEvent>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    spec.validate()?;
    if spec.lambda_n == 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = stream_rng(seed, stream, Channel::Jumps);
    let poisson = Poisson::new(spec.lambda_n * horizon)
        .map_err(|e| invalid(format!("cannot build Poisson law: {e}")))?;
    let count = poisson.sample(&mut rng) as usize;
    let mut times: Vec<f64> = (0..count)
        .map(|_| horizon * (1.0 - rng.random::<f64>()))
        .collect();
    times.sort_by(f64::total_cmp);
    Ok(times
        .into_iter()
        .map(|time| JumpEvent {
            time,
            size: spec.jump_law.sample(spec.zeta, &mut rng),
        })
        .collect())
}

/// A sampled realization of `L` on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub dt: f64,
    pub sigma: f64,
    /// Standard Brownian increments (variance `dt`), one per step.
    pub brownian_increments: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub seed: u64,
}

impl NoisePath {
    pub fn generate(seed: u64, spec: &NoiseSpec, dt: f64, steps: usize) -> Result<Self> {
        Self::generate_on_stream(seed, 0, spec, dt, steps)
    }

    /// The same streams the solver consumes for trajectory `stream`.
    pub fn generate_on_stream(
        seed: u64,
        stream: u64,
        spec: &NoiseSpec,
        dt: f64,
        steps: usize,
    ) -> Result<Self> {
        spec.validate()?;
        let brownian_increments = brownian_increments_on_stream(seed, stream, dt, steps)?;
        let jumps = if steps == 0 {
            Vec::new()
        } else {
            jump_events_on_stream(seed, stream, spec, dt * steps as f64)?
        };
        Ok(NoisePath {
            dt,
            sigma: spec.sigma,
            brownian_increments,
            jumps,
            seed,
        })
    }

    pub fn steps(&self) -> usize {
        self.brownian_increments.len()
    }

    /// `L(t_k)` at every grid point `t_k = k dt`, `k = 0..=steps`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps() + 1);
        let mut w = 0.0;
        let mut jump_sum = 0.0;
        let mut next_jump = 0;
        out.push(0.0);
        for (k, dw) in self.brownian_increments.iter().enumerate() {
            w += dw;
            let t = (k + 1) as f64 * self.dt;
            while next_jump < self.jumps.len() && self.jumps[next_jump].time <= t {
                jump_sum += self.jumps[next_jump].size;
                next_jump += 1;
            }
            out.push(self.sigma * w + jump_sum);
        }
        out
    }

    /// CSV with columns `t, dW, cumulative_L`; the increment on row `k` ends at `t_k`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "dW", "cumulative_L"])?;
        let cumulative = self.cumulative();
        w.write_record(["0", "0", "0"])?;
        for (k, dw) in self.brownian_increments.iter().enumerate() {
            let t = (k + 1) as f64 * self.dt;
            w.write_record([t.to_string(), dw.to_string(), cumulative[k + 1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_jumps_csv<W: Write>(&self, out: W) -> Result<()> {
        write_jumps_csv(&self.jumps, out)
    }
}

pub fn write_jumps_csv<W: Write>(jumps: &[JumpEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "size"])?;
    for j in jumps {
        w.write_record([j.time.to_string(), j.size.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn brownian_empty_and_invalid() {
        assert!(sample_brownian_increments(1, 0.1, 0).unwrap().is_empty());
        assert!(sample_brownian_increments(1, 0.0, 5).is_err());
        assert!(sample_brownian_increments(1, -1.0, 5).is_err());
    }

    #[test]
    fn brownian_statistics() {
        let n = 100_000;
        let xs = sample_brownian_increments(42, 1.0, n).unwrap();
        let (mean, var) = mean_var(&xs);
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn brownian_is_deterministic() {
        let a = sample_brownian_increments(9, 0.01, 1000).unwrap();
        let b = sample_brownian_increments(9, 0.01, 1000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_jumps_without_intensity() {
        let spec = NoiseSpec::brownian(1.0);
        assert!(sample_jump_events(3, &spec, 100.0).unwrap().is_empty());
        assert!(sample_jump_events(3, &spec, 0.0).is_err());
    }

    #[test]
    fn poisson_count_mean() {
        let spec = NoiseSpec::jump_diffusion(0.0, 2.0, 1.0, JumpLaw::Uniform);
        let reps = 1000;
        let total: usize = (0..reps)
            .map(|i| jump_events_on_stream(11, i, &spec, 10.0).unwrap().len())
            .sum();
        let mean = total as f64 / reps as f64;
        assert!((mean - 20.0).abs() < 3.0 * (20.0 / reps as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn uniform_jumps_respect_support() {
        let spec = NoiseSpec::jump_diffusion(0.0, 50.0, 0.5, JumpLaw::Uniform);
        let jumps = sample_jump_events(5, &spec, 100.0).unwrap();
        assert!(jumps.len() > 1000);
        assert!(jumps.iter().all(|j| j.size.abs() <= 0.5));
        assert!(jumps.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(jumps.iter().all(|j| j.time > 0.0 && j.time <= 100.0));
    }

    #[test]
    fn moments_closed_form() {
        let m = levy_moments(&NoiseSpec::brownian(1.0), 3.0);
        assert_eq!((m.mean, m.variance, m.predictable_qv), (0.0, 3.0, 3.0));

        let spec = NoiseSpec::jump_diffusion(0.0, 2.0, 0.5, JumpLaw::symmetric_two_point());
        let m = levy_moments(&spec, 1.0);
        assert_eq!(m.mean, 0.0);
        assert_relative_eq!(m.variance, 0.5, epsilon = 1e-15);
        assert_relative_eq!(m.predictable_qv, 0.5, epsilon = 1e-15);

        let m = levy_moments(&NoiseSpec::brownian(0.0), 2.0);
        assert_eq!((m.mean, m.variance, m.predictable_qv), (0.0, 0.0, 0.0));
    }

    #[test]
    fn truncated_gaussian_second_moment_matches_sampling() {
        let law = JumpLaw::TruncatedGaussian { scale: 0.7 };
        let mut rng = stream_rng(1, 0, Channel::Jumps);
        let n = 200_000;
        let s2: f64 = (0..n).map(|_| law.sample(2.0, &mut rng).powi(2)).sum::<f64>() / n as f64;
        let exact = law.second_moment(2.0);
        assert!((s2 - exact).abs() < 0.02 * exact, "{s2} vs {exact}");
        // Never exceeds the untruncated variance.
        assert!(exact < (0.7f64 * 2.0).powi(2));
    }

    #[test]
    fn classification() {
        assert_eq!(classify_noise(&NoiseSpec::brownian(1.0)), NoiseClass::HRegM);
        let uniform = NoiseSpec::jump_diffusion(0.0, 1.0, 1.0, JumpLaw::Uniform);
        assert_eq!(classify_noise(&uniform), NoiseClass::HRegM);
        let one_sided = NoiseSpec::jump_diffusion(0.0, 1.0, 1.0, JumpLaw::TwoPoint { p_plus: 1.0 });
        assert!(!one_sided.centered);
        assert_eq!(one_sided.mean_jump(), 1.0);
        assert_eq!(classify_noise(&one_sided), NoiseClass::HReg);
    }

    #[test]
    fn centered_flag_is_checked() {
        let mut spec = NoiseSpec::jump_diffusion(0.0, 1.0, 1.0, JumpLaw::TwoPoint { p_plus: 0.9 });
        assert!(spec.validate().is_ok());
        spec.centered = true;
        assert!(spec.validate().is_err());
        spec.sigma = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sample_variance_tracks_predictable_qv() {
        let spec = NoiseSpec::jump_diffusion(0.5, 2.0, 0.8, JumpLaw::Uniform);
        let dt = 0.01;
        for &t in &[0.5f64, 1.0, 5.0] {
            let steps = (t / dt).round() as usize;
            let k = 1000;
            let ends: Vec<f64> = (0..k)
                .map(|i| {
                    let p = NoisePath::generate_on_stream(77, i, &spec, dt, steps).unwrap();
                    *p.cumulative().last().unwrap()
                })
                .collect();
            let (mean, var) = mean_var(&ends);
            let fourth = ends.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / k as f64;
            let se = ((fourth - var * var) / k as f64).sqrt();
            let target = levy_moments(&spec, t).predictable_qv;
            assert!((var - target).abs() < 3.0 * se, "t={t}: {var} vs {target} (se {se})");
        }
    }

    #[test]
    fn jump_counts_are_exchangeable_across_intervals() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let spec = NoiseSpec::jump_diffusion(0.0, 3.0, 1.0, JumpLaw::Uniform);
        let bins = 10;
        let horizon = 100.0;
        let mut counts = vec![0usize; bins];
        for i in 0..50 {
            for j in jump_events_on_stream(123, i, &spec, horizon).unwrap() {
                let b = ((j.time / horizon * bins as f64).ceil() as usize).clamp(1, bins) - 1;
                counts[b] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let expected = total as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-3);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn noise_path_is_reproducible_and_exports() {
        let spec = NoiseSpec::jump_diffusion(1.0, 1.0, 0.3, JumpLaw::Uniform);
        let a = NoisePath::generate(4, &spec, 0.01, 500).unwrap();
        let b = NoisePath::generate(4, &spec, 0.01, 500).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,dW,cumulative_L\n"));
        assert_eq!(text.lines().count(), 502);
        let mut jbuf = Vec::new();
        a.write_jumps_csv(&mut jbuf).unwrap();
        assert_eq!(String::from_utf8(jbuf).unwrap().lines().count(), a.jumps.len() + 1);
    }

    proptest! {
        #[test]
        fn every_jump_law_respects_zeta(seed in 0u64..500, zeta in 0.0f64..3.0, which in 0usize..3) {
            let law = [JumpLaw::Uniform, JumpLaw::TwoPoint { p_plus: 0.3 }, JumpLaw::TruncatedGaussian { scale: 1.5 }][which];
            let spec = NoiseSpec::jump_diffusion(0.0, 20.0, zeta, law);
            for j in sample_jump_events(seed, &spec, 5.0).unwrap() {
                prop_assert!(j.size.abs() <= zeta);
            }
        }
    }
}
