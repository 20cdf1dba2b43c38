//! Benchmark fixtures shared by the criterion targets.

use sdde_core::{FeedbackFn, ModelSpec, NoiseSpec};

/// Chaotic deterministic setting with `γ = 5`, `r = 10`, `τ = 1`, `p = 8`.
pub fn chaotic_model() -> ModelSpec {
    ModelSpec::constant(5.0, 10.0, 1.0, FeedbackFn::mackey_glass(8.0, 1), 0.0)
}

/// Same parameters with multiplicative noise `b = 0.01`.
pub fn noisy_model(p: f64) -> (ModelSpec, NoiseSpec) {
    (
        ModelSpec::constant(5.0, 10.0, 1.0, FeedbackFn::mackey_glass(p, 1), 0.01),
        NoiseSpec::brownian(1.0),
    )
}
