//! Training: maximum-likelihood and max-margin learners plus the shared
//! per-sample coefficient machinery.

pub mod ml;
pub mod mm;

use serde::{Deserialize, Serialize};

/// Clamp range for the adaptive per-sample coefficients. The closed
/// forms divide two log-likelihood (or hinge) terms, so a violated
/// informativeness assumption can flip the sign; clamping keeps the
/// optimization defined.
pub const ALPHA_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 1e4;

/// Scale of the uniform random initialization used by both trainers.
pub const DEFAULT_INIT_SCALE: f64 = 0.1;

/// How the per-sample loss coefficients are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaMode {
    /// `coeff_i = 1 / lambda` for every sample.
    FixedShared(f64),
    /// `coeff_i = 1 / lambda_i`.
    FixedPerSample(Vec<f64>),
    /// `coeff_i = alpha_i(w)`, recomputed from the current weights at the
    /// start of each outer iteration and held fixed within it.
    Adaptive,
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::FixedShared(1.0)
    }
}

/// Clamp an adaptive coefficient; a 0/0 ratio is defined as 1 so the
/// all-zero-weights baseline stays at exactly 1.
pub fn clamp_alpha(ratio: f64) -> f64 {
    if ratio.is_nan() {
        1.0
    } else {
        ratio.clamp(ALPHA_MIN, ALPHA_MAX)
    }
}

/// What a training run did: per-iteration objective values (under that
/// iteration's frozen coefficients), iteration count and the final
/// gradient (or subgradient) max-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
