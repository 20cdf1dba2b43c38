//! Stochastic delay equations with negative feedback.
//!
//! Simulation of `dX = [-γX + r f(X(t-τ))]dt + X(b dL)` in log coordinates,
//! invariant-measure estimation, linear stability, and tail bounds for the
//! supremum of Lévy-driven processes.

pub mod analysis;
pub mod bounds;
pub mod error;
pub mod measure;
pub mod models;
pub mod noise;
pub mod rng;
pub mod solver;

pub use analysis::{Regime, StabilityReport};
pub use bounds::{BoundCurve, BoundKind, EstimateCheckParams, TailBoundParams, VerificationReport};
pub use error::{Error, Result};
pub use measure::{Histogram1D, Histogram2D, MeasureWindow};
pub use models::{Coupling, DriftMode, FeedbackFn, ModelSpec, Rate};
pub use noise::{JumpLaw, NoiseClass, NoisePath, NoiseSpec};
pub use solver::{History, Segment, Space, Trajectory, TrajectoryConfig};

/// Version string recorded in output provenance headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
