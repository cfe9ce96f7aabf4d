//! Maximum-likelihood learning: negated conditional log-likelihood with a
//! Gaussian prior, exact gradient from forward-backward expectations, and
//! a limited-memory quasi-Newton driver with Armijo backtracking.

use crate::error::{Error, Result};
use crate::inference::{self, HiddenMarginals};
use crate::model::{FeatureDims, ModelParams, SequenceSample};
use crate::train::{clamp_alpha, dot, max_norm, LambdaMode, TrainReport, DEFAULT_INIT_SCALE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlConfig {
    /// Gaussian-prior scale; the regularizer is `||w||^2 / (2 sigma^2)`.
    pub sigma: f64,
    pub lambda_mode: LambdaMode,
    pub max_iters: usize,
    /// Stop once the gradient max-norm drops below this.
    pub grad_tol: f64,
    /// Quasi-Newton memory length.
    pub history: usize,
    pub seed: u64,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            sigma: 1.0,
            lambda_mode: LambdaMode::default(),
            max_iters: 400,
            grad_tol: 1e-5,
            history: 10,
            seed: 0,
        }
    }
}

impl MlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be > 0"));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        Ok(())
    }
}

fn check_dataset(samples: &[SequenceSample], dims: &FeatureDims) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    for s in samples {
        s.validate(dims)?;
        if dims.m_xstar > 0 && !s.has_privileged() {
            return Err(Error::invalid(format!(
                "sample {} has no privileged data but the model has a privileged channel",
                s.id
            )));
        }
    }
    Ok(())
}

/// Negated weighted log-likelihood plus the Gaussian prior:
/// `-sum_i coeff_i log p(y_i | x_i, x*_i; w) + ||w||^2 / (2 sigma^2)`.
pub fn ml_objective(
    samples: &[SequenceSample],
    params: &ModelParams,
    coeffs: &[f64],
    sigma: f64,
) -> Result<f64> {
    check_dataset(samples, params.dims())?;
    if coeffs.len() != samples.len() {
        return Err(Error::invalid("one coefficient per sample required"));
    }
    let per_sample: Result<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            let post = inference::posterior(s, params, true)?;
            Ok(post.log_prob(s.label))
        })
        .collect();
    let per_sample = per_sample?;
    let data_term: f64 = per_sample.iter().zip(coeffs).map(|(lp, c)| -c * lp).sum();
    Ok(data_term + params.squared_norm() / (2.0 * sigma * sigma))
}

/// Exact gradient of [`ml_objective`] with the coefficients treated as
/// constants: per sample, the model feature expectation minus the
/// clamped-label expectation, plus `w / sigma^2`.
pub fn ml_gradient(
    samples: &[SequenceSample],
    params: &ModelParams,
    coeffs: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    check_dataset(samples, params.dims())?;
    if coeffs.len() != samples.len() {
        return Err(Error::invalid("one coefficient per sample required"));
    }
    let dims = *params.dims();
    let n = dims.param_len();
    let parts: Result<Vec<Vec<f64>>> = samples
        .par_iter()
        .zip(coeffs.par_iter())
        .map(|(s, &coeff)| {
            let (clps, margs) = inference::all_class_stats(s, params, true)?;
            let lse = {
                let mut m = f64::NEG_INFINITY;
                for &v in &clps {
                    m = m.max(v);
                }
                m + clps.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            };
            let mut g = vec![0.0; n];
            for y in 0..dims.n_labels {
                let py = (clps[y] - lse).exp();
                accumulate_expected_features(&mut g, coeff * py, s, y, &margs[y], &dims);
            }
            accumulate_expected_features(&mut g, -coeff, s, s.label, &margs[s.label], &dims);
            Ok(g)
        })
        .collect();
    let parts = parts?;
    let w = params.to_vec();
    let mut grad = vec![0.0; n];
    for part in &parts {
        for (g, p) in grad.iter_mut().zip(part) {
            *g += p;
        }
    }
    let inv_sigma2 = 1.0 / (sigma * sigma);
    for (g, wi) in grad.iter_mut().zip(&w) {
        *g += wi * inv_sigma2;
    }
    Ok(grad)
}

/// Add `weight * E[features | y]` to `out`, where the expectation is over
/// the hidden-state marginals for label `y`.
fn accumulate_expected_features(
    out: &mut [f64],
    weight: f64,
    sample: &SequenceSample,
    label: usize,
    marg: &HiddenMarginals,
    dims: &FeatureDims,
) {
    let h = dims.n_hidden;
    let t = sample.len();
    let n1 = dims.n_labels * h;
    let n2 = h * dims.m_x;
    let n3 = h * dims.m_xstar;
    for j in 0..t {
        let row = marg.unary_row(j);
        let frame = &sample.frames[j];
        for a in 0..h {
            let p = row[a];
            if p == 0.0 {
                continue;
            }
            out[label * h + a] += weight * p;
            let base2 = n1 + a * dims.m_x;
            for (d, &x) in frame.iter().enumerate() {
                out[base2 + d] += weight * p * x;
            }
        }
        if let Some(priv_frames) = &sample.privileged {
            let pf = &priv_frames[j];
            for a in 0..h {
                let p = row[a];
                if p == 0.0 {
                    continue;
                }
                let base3 = n1 + n2 + a * dims.m_xstar;
                for (d, &x) in pf.iter().enumerate() {
                    out[base3 + d] += weight * p * x;
                }
            }
        }
    }
    let omega_base = n1 + n2 + n3;
    for j in 0..t.saturating_sub(1) {
        for a in 0..h {
            for b in 0..h {
                let p = marg.pairwise(j, a, b);
                if p != 0.0 {
                    out[omega_base + (label * h + a) * h + b] += weight * p;
                }
            }
        }
    }
}

/// Closed-form adaptive coefficient: the privileged log-posterior of the
/// true label over the regular-only one plus the squared weight norm,
/// clamped to `[ALPHA_MIN, ALPHA_MAX]`.
pub fn adaptive_alpha_ml(sample: &SequenceSample, params: &ModelParams) -> Result<f64> {
    if params.dims().m_xstar > 0 && !sample.has_privileged() {
        return Err(Error::invalid(format!(
            "sample {} has no privileged data",
            sample.id
        )));
    }
    let lp_priv = inference::posterior(sample, params, true)?.log_prob(sample.label);
    let lp_reg = inference::posterior(sample, params, false)?.log_prob(sample.label);
    Ok(clamp_alpha(lp_priv / (lp_reg + params.squared_norm())))
}

/// Resolve per-sample coefficients for the current weights.
pub fn resolve_coeffs(
    samples: &[SequenceSample],
    params: &ModelParams,
    mode: &LambdaMode,
) -> Result<Vec<f64>> {
    match mode {
        LambdaMode::FixedShared(lambda) => {
            if !(*lambda > 0.0) {
                return Err(Error::invalid("lambda must be > 0"));
            }
            Ok(vec![1.0 / lambda; samples.len()])
        }
        LambdaMode::FixedPerSample(lambdas) => {
            if lambdas.len() != samples.len() {
                return Err(Error::invalid("one lambda per sample required"));
            }
            if lambdas.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::invalid("all lambdas must be > 0"));
            }
            Ok(lambdas.iter().map(|l| 1.0 / l).collect())
        }
        LambdaMode::Adaptive => samples
            .par_iter()
            .map(|s| adaptive_alpha_ml(s, params))
            .collect(),
    }
}

struct LbfgsMemory {
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>, // (s, y, 1/s.y)
    capacity: usize,
}

impl LbfgsMemory {
    fn new(capacity: usize) -> Self {
        LbfgsMemory { pairs: std::collections::VecDeque::new(), capacity: capacity.max(1) }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let sn = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yn = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy <= 1e-12 * sn * yn {
            return; // curvature condition failed, skip the pair
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Two-loop recursion: returns the descent direction `-H g`.
    fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        for qi in q.iter_mut() {
            *qi = -*qi;
        }
        q
    }
}

/// Train by quasi-Newton minimization of the negated objective. In
/// adaptive mode the coefficients are recomputed from the current weights
/// at the start of each outer iteration and frozen within it (they are
/// not differentiated through). Deterministic given the seed.
pub fn train_ml(
    samples: &[SequenceSample],
    dims: FeatureDims,
    config: &MlConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    check_dataset(samples, &dims)?;
    let classes: std::collections::BTreeSet<usize> = samples.iter().map(|s| s.label).collect();
    if classes.len() < 2 {
        return Err(Error::invalid("training needs at least 2 distinct classes"));
    }

    let mut params = ModelParams::init(dims, config.seed, DEFAULT_INIT_SCALE);
    let mut memory = LbfgsMemory::new(config.history);
    let mut trace = Vec::new();
    let mut final_grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..config.max_iters {
        iterations = iter + 1;
        let coeffs = resolve_coeffs(samples, &params, &config.lambda_mode)?;
        let f0 = ml_objective(samples, &params, &coeffs, config.sigma)?;
        if !f0.is_finite() {
            return Err(Error::numerical(format!("non-finite objective at iteration {iter}")));
        }
        if trace.is_empty() {
            trace.push(f0);
        }
        let g0 = ml_gradient(samples, &params, &coeffs, config.sigma)?;
        final_grad_norm = max_norm(&g0);
        if final_grad_norm <= config.grad_tol {
            converged = true;
            break;
        }

        let mut dir = memory.direction(&g0);
        if dot(&g0, &dir) >= 0.0 {
            // not a descent direction; fall back to steepest descent
            memory.clear();
            dir = g0.iter().map(|v| -v).collect();
        }

        let w0 = params.to_vec();
        let gd = dot(&g0, &dir);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let w1: Vec<f64> = w0.iter().zip(&dir).map(|(w, d)| w + step * d).collect();
            let cand = ModelParams::from_vec(&w1, dims)?;
            let f1 = ml_objective(samples, &cand, &coeffs, config.sigma)?;
            if f1.is_finite() && f1 <= f0 + 1e-4 * step * gd {
                accepted = Some((cand, w1, f1));
                break;
            }
            step *= 0.5;
        }
        let Some((next, w1, f1)) = accepted else {
            // no productive step left along any direction we can build
            break;
        };
        let g1 = ml_gradient(samples, &next, &coeffs, config.sigma)?;
        let s: Vec<f64> = w1.iter().zip(&w0).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        params = next;
        trace.push(f1);
    }

    let report = TrainReport {
        objective_trace: trace,
        iterations,
        final_grad_norm,
        converged,
    };
    Ok((params, report))
}
