//! Feedback functionals and the model specification.
//!
//! The simulated equation is the log-transformed system
//!
//! ```text
//! dY = [-γ(t) + r(t) e^{-Y(t)} f(e^{Y(t-τ)})] dt + a(Y_t, t) dt + b(Y_{t-}, t-) dL(t)
//! ```
//!
//! with `X = e^Y` the population-scale variable.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::NoiseSpec;

/// Below this log-state `e^{-y}` leaves the range where the drift product is trustworthy.
pub const BLOW_DOWN_LEVEL: f64 = -700.0;

/// Closed menu of feedback nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackFn {
    /// `f(x) = x^q / (1 + x^p)`, `p ≥ 1`, `q ∈ {0, 1}`.
    MackeyGlass { p: f64, q: u8 },
    /// `f(x) = x e^{-p x}`, `p > 0`.
    Nicholson { p: f64 },
}

#[inline]
fn pow(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

impl FeedbackFn {
    pub fn mackey_glass(p: f64, q: u8) -> Self {
        FeedbackFn::MackeyGlass { p, q }
    }

    pub fn nicholson(p: f64) -> Self {
        FeedbackFn::Nicholson { p }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FeedbackFn::MackeyGlass { p, q } => {
                if !(p >= 1.0 && p.is_finite()) {
                    return Err(invalid(format!("Mackey-Glass exponent p must be >= 1, got {p}")));
                }
                if q > 1 {
                    return Err(invalid(format!("Mackey-Glass q must be 0 or 1, got {q}")));
                }
            }
            FeedbackFn::Nicholson { p } => {
                if !(p > 0.0 && p.is_finite()) {
                    return Err(invalid(format!("Nicholson p must be > 0, got {p}")));
                }
            }
        }
        Ok(())
    }

    /// Evaluates `f(x)` for `x ≥ 0`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(invalid(format!("feedback is defined for x >= 0, got {x}")));
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        match *self {
            FeedbackFn::MackeyGlass { p, q } => {
                let denom = 1.0 + pow(x, p);
                if q == 0 {
                    1.0 / denom
                } else if denom.is_infinite() {
                    0.0
                } else {
                    x / denom
                }
            }
            FeedbackFn::Nicholson { p } => {
                if x.is_infinite() {
                    0.0
                } else {
                    x * (-p * x).exp()
                }
            }
        }
    }

    /// Least upper bound `M` of `f` on `[0, ∞)`.
    pub fn sup_bound(&self) -> f64 {
        match *self {
            FeedbackFn::MackeyGlass { q: 0, .. } => 1.0,
            FeedbackFn::MackeyGlass { p, .. } => {
                if p == 1.0 {
                    // x / (1 + x) increases to 1 without attaining it.
                    1.0
                } else {
                    self.maximizer().map_or(1.0, |x| x * (p - 1.0) / p)
                }
            }
            FeedbackFn::Nicholson { p } => 1.0 / (p * std::f64::consts::E),
        }
    }

    /// Point where `f` attains its supremum, if it is attained.
    pub fn maximizer(&self) -> Option<f64> {
        match *self {
            FeedbackFn::MackeyGlass { q: 0, .. } => Some(0.0),
            FeedbackFn::MackeyGlass { p, .. } if p > 1.0 => Some((1.0 / (p - 1.0)).powf(1.0 / p)),
            FeedbackFn::MackeyGlass { .. } => None,
            FeedbackFn::Nicholson { p } => Some(1.0 / p),
        }
    }

    /// `f(0)`, the value deciding whether lower bounds are available.
    pub fn at_zero(&self) -> f64 {
        self.eval_unchecked(0.0)
    }

    /// Right derivative of `f` at `x ≥ 0`.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            FeedbackFn::MackeyGlass { p, q } => {
                let xp = pow(x, p);
                let denom = 1.0 + xp;
                if q == 0 {
                    // d/dx (1 + x^p)^{-1} = -p x^{p-1} / (1 + x^p)^2
                    if x == 0.0 {
                        if p == 1.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    } else {
                        -p * xp / x / (denom * denom)
                    }
                } else {
                    (1.0 + xp - p * xp) / (denom * denom)
                }
            }
            FeedbackFn::Nicholson { p } => (1.0 - p * x) * (-p * x).exp(),
        }
    }

    pub fn derivative_at_zero(&self) -> f64 {
        self.derivative(0.0)
    }
}

/// Positive rate, constant or piecewise constant and right-continuous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rate {
    Constant(f64),
    /// `values[i]` holds on `[breaks[i-1], breaks[i])`, with `values[0]` before
    /// the first break and the last value after the final one.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
}

impl From<f64> for Rate {
    fn from(v: f64) -> Self {
        Rate::Constant(v)
    }
}

impl Rate {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Rate::Constant(v) => *v,
            Rate::Piecewise { breaks, values } => values[breaks.partition_point(|&b| b <= t)],
        }
    }

    pub fn inf(&self) -> f64 {
        match self {
            Rate::Constant(v) => *v,
            Rate::Piecewise { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Rate::Constant(v) => *v,
            Rate::Piecewise { values, .. } => {
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Rate::Constant(v) => Some(*v),
            Rate::Piecewise { values, .. } if values.windows(2).all(|w| w[0] == w[1]) => {
                values.first().copied()
            }
            Rate::Piecewise { .. } => None,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let Rate::Piecewise { breaks, values } = self {
            if values.len() != breaks.len() + 1 {
                return Err(invalid(format!(
                    "{name}: piecewise rate needs one more value than breakpoints"
                )));
            }
            if !breaks.windows(2).all(|w| w[0] < w[1]) || breaks.iter().any(|b| !b.is_finite()) {
                return Err(invalid(format!("{name}: breakpoints must be finite and increasing")));
            }
        }
        let (lo, hi) = (self.inf(), self.sup());
        if !(lo >= 0.0 && hi.is_finite()) {
            return Err(invalid(format!("{name} must be finite and non-negative")));
        }
        Ok(())
    }
}

/// Noise coefficient `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Coupling {
    /// `b ≡ b_const`.
    Constant { b_const: f64 },
    /// `b(φ) = clamp(c_offset + c_slope·φ(0), -c_bound, c_bound)`.
    Clamped {
        c_bound: f64,
        #[serde(default)]
        c_offset: f64,
        #[serde(default)]
        c_slope: f64,
    },
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling::Constant { b_const: 0.0 }
    }
}

impl Coupling {
    #[inline]
    pub fn eval(&self, y_now: f64) -> f64 {
        match *self {
            Coupling::Constant { b_const } => b_const,
            Coupling::Clamped {
                c_bound,
                c_offset,
                c_slope,
            } => (c_offset + c_slope * y_now).clamp(-c_bound, c_bound),
        }
    }

    /// Declared `β` with `b² ≤ β²`.
    pub fn bound(&self) -> f64 {
        match *self {
            Coupling::Constant { b_const } => b_const.abs(),
            Coupling::Clamped { c_bound, .. } => c_bound,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Coupling::Constant { b_const } if b_const.is_finite() => Ok(()),
            Coupling::Clamped {
                c_bound,
                c_offset,
                c_slope,
            } if c_bound >= 0.0 && c_bound.is_finite() && c_offset.is_finite() && c_slope.is_finite() => {
                Ok(())
            }
            _ => Err(invalid("noise coupling must be finite with a non-negative bound")),
        }
    }
}

/// How the auxiliary drift `a` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftMode {
    /// `a = -σ² b² / 2`: multiplicative Brownian noise in `x`.
    ItoCoupled,
    /// `a = -σ² b² / 2 + b ∫_{|z|≤1} z ν(dz)`.
    LevyCoupled,
    /// A fixed constant drift.
    Explicit { a: f64 },
}

impl Default for DriftMode {
    fn default() -> Self {
        DriftMode::ItoCoupled
    }
}

/// Auxiliary drift for the coupled modes.
pub fn coupling_drift(b_value: f64, noise: &NoiseSpec, mode: DriftMode) -> Result<f64> {
    match mode {
        DriftMode::ItoCoupled => Ok(ito_correction(b_value, noise)),
        DriftMode::LevyCoupled => Ok(ito_correction(b_value, noise)
            + b_value * noise.lambda_n * noise.jump_law.unit_ball_mean(noise.zeta)),
        DriftMode::Explicit { .. } => Err(Error::Precondition(
            "coupling_drift only serves the ito_coupled and levy_coupled modes".into(),
        )),
    }
}

#[inline]
fn ito_correction(b: f64, noise: &NoiseSpec) -> f64 {
    -0.5 * b * b * noise.sigma * noise.sigma
}

/// Full specification of the feedback equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub gamma: Rate,
    pub r: Rate,
    pub tau: f64,
    pub feedback: FeedbackFn,
    #[serde(default)]
    pub noise: Coupling,
    #[serde(default)]
    pub drift_mode: DriftMode,
}

impl ModelSpec {
    /// Constant-rate model with `b ≡ b_const` and Itô coupling.
    pub fn constant(gamma: f64, r: f64, tau: f64, feedback: FeedbackFn, b_const: f64) -> Self {
        ModelSpec {
            gamma: Rate::Constant(gamma),
            r: Rate::Constant(r),
            tau,
            feedback,
            noise: Coupling::Constant { b_const },
            drift_mode: DriftMode::ItoCoupled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gamma.validate("gamma")?;
        self.r.validate("r")?;
        if !(self.gamma.inf() > 0.0) {
            return Err(invalid("gamma must be bounded away from zero"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        self.feedback.validate()?;
        self.noise.validate()?;
        if let DriftMode::Explicit { a } = self.drift_mode {
            if !a.is_finite() {
                return Err(invalid("explicit drift a must be finite"));
            }
        }
        Ok(())
    }

    /// `γ̃ = inf γ`.
    pub fn gamma_inf(&self) -> f64 {
        self.gamma.inf()
    }

    /// `r̃ = sup r`.
    pub fn r_sup(&self) -> f64 {
        self.r.sup()
    }

    pub fn beta(&self) -> f64 {
        self.noise.bound()
    }

    /// `-γ(t) + r(t) e^{-y} f(e^{y_delay})`, without the auxiliary drift.
    #[inline]
    pub fn feedback_drift(&self, y_now: f64, y_delay: f64, t: f64) -> f64 {
        -self.gamma.at(t) + self.r.at(t) * (-y_now).exp() * self.feedback.eval_unchecked(y_delay.exp())
    }

    /// Auxiliary drift `a` at the current log-state.
    #[inline]
    pub fn aux_drift(&self, y_now: f64, noise: &NoiseSpec) -> f64 {
        match self.drift_mode {
            DriftMode::Explicit { a } => a,
            DriftMode::ItoCoupled => ito_correction(self.noise.eval(y_now), noise),
            DriftMode::LevyCoupled => {
                let b = self.noise.eval(y_now);
                ito_correction(b, noise) + b * noise.lambda_n * noise.jump_law.unit_ball_mean(noise.zeta)
            }
        }
    }

    /// Range `[α_min, α_max]` of the auxiliary drift over all admissible states.
    pub fn aux_drift_bounds(&self, noise: &NoiseSpec) -> (f64, f64) {
        let (b_lo, b_hi) = match self.noise {
            Coupling::Constant { b_const } => (b_const, b_const),
            Coupling::Clamped { c_bound, .. } => (-c_bound, c_bound),
        };
        let s2 = noise.sigma * noise.sigma;
        let m = match self.drift_mode {
            DriftMode::Explicit { a } => return (a, a),
            DriftMode::ItoCoupled => 0.0,
            DriftMode::LevyCoupled => noise.lambda_n * noise.jump_law.unit_ball_mean(noise.zeta),
        };
        let g = |b: f64| -0.5 * s2 * b * b + b * m;
        let mut lo = g(b_lo).min(g(b_hi));
        let mut hi = g(b_lo).max(g(b_hi));
        // Concave in b: interior maximum at b = m / σ².
        if s2 > 0.0 {
            let b_star = m / s2;
            if b_star > b_lo && b_star < b_hi {
                hi = hi.max(g(b_star));
            }
        } else if b_lo < 0.0 && b_hi > 0.0 {
            lo = lo.min(g(0.0));
            hi = hi.max(g(0.0));
        }
        (lo, hi)
    }

    /// Full transformed drift; fails with a blow-down diagnostic far below zero.
    pub fn transformed_drift(&self, noise: &NoiseSpec, y_now: f64, y_delay: f64, t: f64) -> Result<f64> {
        if y_now < BLOW_DOWN_LEVEL {
            return Err(Error::Domain(format!(
                "blow-down: log-state {y_now} is below {BLOW_DOWN_LEVEL} at t = {t}"
            )));
        }
        Ok(self.feedback_drift(y_now, y_delay, t) + self.aux_drift(y_now, noise))
    }
}

pub fn eval_feedback(f: &FeedbackFn, x: f64) -> Result<f64> {
    f.eval(x)
}

pub fn feedback_sup_bound(f: &FeedbackFn) -> f64 {
    f.sup_bound()
}

pub fn feedback_derivative_at_zero(f: &FeedbackFn) -> f64 {
    f.derivative_at_zero()
}
