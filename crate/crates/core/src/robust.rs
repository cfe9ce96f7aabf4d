//! Robust modeling of the privileged channel.
//!
//! A joint multivariate Student's t is fitted by EM over stacked per-frame
//! `[x*, x]` vectors (privileged block first), the conditional t of `x*`
//! given `x` follows in closed form, and a k-means codebook discretizes
//! the privileged space so the test-time marginalization has a finite
//! support. The heavy tails are the point: a single wild privileged frame
//! barely moves the fitted location, where a Gaussian fit would chase it.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

/// Clamp range for the degrees of freedom.
pub const NU_MIN: f64 = 0.5;
pub const NU_MAX: f64 = 1e6;

/// Joint multivariate Student's-t parameters over `[x*, x]` (privileged
/// block first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    /// Location, length `M = m_xstar + m_x`.
    pub mu: Vec<f64>,
    /// Scale matrix, row-major `M x M`, symmetric positive definite.
    pub sigma: Vec<f64>,
    /// Degrees of freedom, clamped to `[NU_MIN, NU_MAX]`.
    pub nu: f64,
}

impl StudentTParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if self.sigma.len() != m * m {
            return Err(Error::invalid("scale matrix size does not match location"));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::invalid("degrees of freedom must be positive and finite"));
        }
        if self.mu.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite t-parameters"));
        }
        for i in 0..m {
            for j in 0..i {
                if (self.sigma[i * m + j] - self.sigma[j * m + i]).abs() > 1e-10 {
                    return Err(Error::invalid("scale matrix is not symmetric"));
                }
            }
        }
        Ok(())
    }

    pub fn log_density(&self, v: &[f64]) -> Result<f64> {
        t_log_density(&self.mu, &self.sigma, self.nu, v)
    }
}

/// Conditional t of the privileged block given a regular frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTParams {
    pub mu_star: Vec<f64>,
    /// Row-major `m_xstar x m_xstar`.
    pub sigma_star: Vec<f64>,
    pub nu_star: f64,
}

impl ConditionalTParams {
    pub fn dim(&self) -> usize {
        self.mu_star.len()
    }

    pub fn log_density(&self, v: &[f64]) -> Result<f64> {
        t_log_density(&self.mu_star, &self.sigma_star, self.nu_star, v)
    }
}

/// Which block's dimension enters the conditional scale factor and the
/// conditional degrees of freedom.
///
/// `PredictedBlock` uses the dimension of the predicted (privileged)
/// block in both places. The textbook conditional uses the conditioning
/// block instead (`ConditioningBlock`); the two coincide in the Gaussian
/// limit, which is the only externally pinned behavior, so the predicted
/// block is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofMode {
    PredictedBlock,
    ConditioningBlock,
}

/// Discretization of the privileged feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivCodebook {
    pub codewords: Vec<Vec<f64>>,
}

impl PrivCodebook {
    pub fn k(&self) -> usize {
        self.codewords.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.codewords.is_empty() {
            return Err(Error::invalid("codebook must hold at least one codeword"));
        }
        let w = self.codewords[0].len();
        for c in &self.codewords {
            if c.len() != w || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("codebook has ragged or non-finite codewords"));
            }
        }
        for i in 0..self.codewords.len() {
            for j in 0..i {
                if self.codewords[i] == self.codewords[j] {
                    return Err(Error::invalid("codebook contains duplicate codewords"));
                }
            }
        }
        Ok(())
    }
}

/// EM settings for the joint t fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    pub nu_mode: NuMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NuMode {
    Fixed(f64),
    Estimate,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iters: 200, tol: 1e-6, nu_mode: NuMode::Estimate }
    }
}

/// Result of an EM fit: parameters plus the per-iteration log-likelihood
/// trace (non-decreasing).
#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: StudentTParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
}

fn chol_with_jitter(mut mat: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let m = mat.nrows();
    match Cholesky::new(mat.clone()) {
        Some(c) => Ok(c),
        None => {
            let jitter = 1e-9 * mat.trace() / m as f64;
            for i in 0..m {
                mat[(i, i)] += jitter.max(1e-300);
            }
            Cholesky::new(mat)
                .ok_or_else(|| Error::numerical("matrix is not positive definite beyond jitter"))
        }
    }
}

/// Log-density of a multivariate Student's t with location `mu`, scale
/// `sigma` (row-major) and `nu` degrees of freedom.
pub fn t_log_density(mu: &[f64], sigma: &[f64], nu: f64, v: &[f64]) -> Result<f64> {
    let p = mu.len();
    if v.len() != p || sigma.len() != p * p {
        return Err(Error::invalid("t density dimension mismatch"));
    }
    if !(nu > 0.0) {
        return Err(Error::invalid("degrees of freedom must be positive"));
    }
    let chol = chol_with_jitter(DMatrix::from_row_slice(p, p, sigma))?;
    let mut log_det = 0.0;
    for i in 0..p {
        log_det += chol.l()[(i, i)].ln();
    }
    log_det *= 2.0;
    let diff = DVector::from_fn(p, |i, _| v[i] - mu[i]);
    let solved = chol.solve(&diff);
    let delta = diff.dot(&solved);
    let pf = p as f64;
    Ok(ln_gamma((nu + pf) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * pf * (nu.ln() + std::f64::consts::PI.ln())
        - 0.5 * log_det
        - 0.5 * (nu + pf) * (delta / nu).ln_1p())
}

/// EM for the joint multivariate t over pooled per-frame vectors.
///
/// E-step weights are `u_i = (nu + M) / (nu + delta_i)` with `delta_i` the
/// squared Mahalanobis distance; the M-step takes the u-weighted mean and
/// scatter, and (when estimating) solves the one-dimensional fixed-point
/// condition for `nu` by bisection on `[NU_MIN, NU_MAX]`.
pub fn fit_joint_t_em(points: &[Vec<f64>], config: &EmConfig) -> Result<EmFit> {
    if points.is_empty() {
        return Err(Error::invalid("no points to fit"));
    }
    let m = points[0].len();
    if m == 0 || points.iter().any(|p| p.len() != m) {
        return Err(Error::invalid("ragged or empty point vectors"));
    }
    let n = points.len();
    if n < m + 1 {
        return Err(Error::invalid(format!(
            "need at least {} points to fit a {m}-dimensional t, got {n}",
            m + 1
        )));
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("non-finite entries in fit data"));
    }

    // moment initialization
    let mut mu = vec![0.0; m];
    for p in points {
        for (acc, &v) in mu.iter_mut().zip(p) {
            *acc += v;
        }
    }
    for v in mu.iter_mut() {
        *v /= n as f64;
    }
    let mut sigma = DMatrix::zeros(m, m);
    for p in points {
        for i in 0..m {
            for j in 0..m {
                sigma[(i, j)] += (p[i] - mu[i]) * (p[j] - mu[j]);
            }
        }
    }
    sigma /= n as f64;
    let mut nu = match config.nu_mode {
        NuMode::Fixed(v) => v.clamp(NU_MIN, NU_MAX),
        NuMode::Estimate => 10.0,
    };

    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut weights = vec![0.0; n];
    let mut deltas = vec![0.0; n];

    for iter in 0..config.max_iters {
        iterations = iter + 1;
        let chol = chol_with_jitter(sigma.clone())?;
        let mut log_det = 0.0;
        for i in 0..m {
            log_det += chol.l()[(i, i)].ln();
        }
        log_det *= 2.0;

        // E-step and current log-likelihood in one pass
        let pf = m as f64;
        let ll_const = ln_gamma((nu + pf) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * pf * (nu.ln() + std::f64::consts::PI.ln())
            - 0.5 * log_det;
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let diff = DVector::from_fn(m, |r, _| p[r] - mu[r]);
            let solved = chol.solve(&diff);
            let delta = diff.dot(&solved);
            deltas[i] = delta;
            weights[i] = (nu + pf) / (nu + delta);
            ll += ll_const - 0.5 * (nu + pf) * (delta / nu).ln_1p();
        }
        if !ll.is_finite() {
            return Err(Error::numerical(format!("non-finite likelihood at EM iteration {iter}")));
        }
        if !trace.is_empty() && ll < prev_ll - 1e-8 * (1.0 + prev_ll.abs()) {
            return Err(Error::numerical(format!(
                "EM log-likelihood decreased at iteration {iter}: {prev_ll} -> {ll}"
            )));
        }
        trace.push(ll);
        if ll - prev_ll < config.tol && iter > 0 {
            break;
        }
        prev_ll = ll;

        // M-step: weighted mean and scatter
        let wsum: f64 = weights.iter().sum();
        let mut new_mu = vec![0.0; m];
        for (w, p) in weights.iter().zip(points) {
            for (acc, &v) in new_mu.iter_mut().zip(p) {
                *acc += w * v;
            }
        }
        for v in new_mu.iter_mut() {
            *v /= wsum;
        }
        let mut new_sigma = DMatrix::zeros(m, m);
        for (w, p) in weights.iter().zip(points) {
            for i in 0..m {
                for j in 0..=i {
                    new_sigma[(i, j)] += w * (p[i] - new_mu[i]) * (p[j] - new_mu[j]);
                }
            }
        }
        for i in 0..m {
            for j in 0..=i {
                let v = new_sigma[(i, j)] / n as f64;
                new_sigma[(i, j)] = v;
                new_sigma[(j, i)] = v;
            }
        }
        mu = new_mu;
        sigma = new_sigma;

        if let NuMode::Estimate = config.nu_mode {
            // Conditional maximization of the observed log-likelihood over
            // nu, holding the freshly updated (mu, Sigma) fixed: bisection
            // on the stationarity condition d/dnu log-lik = 0. The plain
            // complete-data update also works but moves nu by tiny steps
            // when the data is close to Gaussian.
            let chol_new = chol_with_jitter(sigma.clone())?;
            for (i, p) in points.iter().enumerate() {
                let diff = DVector::from_fn(m, |r, _| p[r] - mu[r]);
                let solved = chol_new.solve(&diff);
                deltas[i] = diff.dot(&solved);
            }
            let mf = m as f64;
            let g = |x: f64| -> f64 {
                let head = 0.5 * (digamma((x + mf) / 2.0) - digamma(x / 2.0)) - mf / (2.0 * x);
                deltas
                    .iter()
                    .map(|&d| {
                        head - 0.5 * (d / x).ln_1p() + 0.5 * (x + mf) * d / (x * (x + d))
                    })
                    .sum()
            };
            let candidate = if g(NU_MIN) <= 0.0 {
                NU_MIN
            } else if g(NU_MAX) >= 0.0 {
                NU_MAX
            } else {
                let (mut lo, mut hi) = (NU_MIN, NU_MAX);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-10 * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            };
            // keep the step only if it does not lose likelihood
            let mut log_det_new = 0.0;
            for i in 0..m {
                log_det_new += chol_new.l()[(i, i)].ln();
            }
            log_det_new *= 2.0;
            let ll_at = |x: f64| -> f64 {
                let c = ln_gamma((x + mf) / 2.0)
                    - ln_gamma(x / 2.0)
                    - 0.5 * mf * (x.ln() + std::f64::consts::PI.ln())
                    - 0.5 * log_det_new;
                deltas.iter().map(|&d| c - 0.5 * (x + mf) * (d / x).ln_1p()).sum()
            };
            if ll_at(candidate) >= ll_at(nu) {
                nu = candidate;
            }
        }
    }

    let params = StudentTParams {
        mu,
        sigma: sigma.transpose().as_slice().to_vec(), // row-major (symmetric anyway)
        nu,
    };
    params.validate()?;
    Ok(EmFit { params, loglik_trace: trace, iterations })
}

/// Conditional t of the privileged block given regular features `x`, with
/// the default degrees-of-freedom convention.
pub fn conditional_t(joint: &StudentTParams, x: &[f64]) -> Result<ConditionalTParams> {
    conditional_t_with_dof(joint, x, DofMode::PredictedBlock)
}

pub fn conditional_t_with_dof(
    joint: &StudentTParams,
    x: &[f64],
    dof_mode: DofMode,
) -> Result<ConditionalTParams> {
    joint.validate()?;
    let m = joint.dim();
    let d = x.len();
    if d == 0 || d >= m {
        return Err(Error::invalid(format!(
            "conditioning vector has length {d}; joint dimension is {m}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite conditioning vector"));
    }
    let p = m - d; // privileged block size, stored first
    let sigma = DMatrix::from_row_slice(m, m, &joint.sigma);
    let sigma_ss = sigma.view((0, 0), (p, p)).into_owned();
    let sigma_sx = sigma.view((0, p), (p, d)).into_owned();
    let sigma_xx = sigma.view((p, p), (d, d)).into_owned();

    let chol_xx = chol_with_jitter(sigma_xx)?;
    let diff = DVector::from_fn(d, |i, _| x[i] - joint.mu[p + i]);
    let solved = chol_xx.solve(&diff);
    let delta = diff.dot(&solved);

    // Regression of the privileged block on the conditioning block; the
    // sign follows the Gaussian conditional, which this must recover as
    // nu grows.
    let mean_shift = &sigma_sx * &solved;
    let mu_star: Vec<f64> = (0..p).map(|i| joint.mu[i] + mean_shift[i]).collect();

    let schur = &sigma_ss - &sigma_sx * chol_xx.solve(&sigma_sx.transpose());
    let block_dim = match dof_mode {
        DofMode::PredictedBlock => p as f64,
        DofMode::ConditioningBlock => d as f64,
    };
    let scale = (joint.nu + delta) / (joint.nu + block_dim);
    let mut sigma_star = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            // symmetrize: the Schur complement picks up tiny asymmetry
            sigma_star[i * p + j] = 0.5 * scale * (schur[(i, j)] + schur[(j, i)]);
        }
    }
    Ok(ConditionalTParams { mu_star, sigma_star, nu_star: joint.nu + block_dim })
}

/// K centroids by Lloyd iterations with seeded farthest-point
/// initialization. Deterministic given the seed.
pub fn build_codebook(frames: &[Vec<f64>], k: usize, seed: u64) -> Result<PrivCodebook> {
    if k == 0 {
        return Err(Error::invalid("codebook size must be >= 1"));
    }
    if frames.is_empty() {
        return Err(Error::invalid("no frames to quantize"));
    }
    let dim = frames[0].len();
    if dim == 0 || frames.iter().any(|f| f.len() != dim) {
        return Err(Error::invalid("ragged or empty privileged frames"));
    }
    if frames.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("non-finite privileged frame"));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    'dedupe: for f in frames {
        for d in &distinct {
            if *d == f {
                continue 'dedupe;
            }
        }
        distinct.push(f);
        if distinct.len() > k {
            break; // enough to know k is feasible
        }
    }
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "requested {k} codewords but only {} distinct frames",
            distinct.len()
        )));
    }

    let sq_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // farthest-point init, first pick from the seeded stream
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..frames.len());
    let mut centroids: Vec<Vec<f64>> = vec![frames[first].clone()];
    let mut min_dist: Vec<f64> = frames.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let mut far = 0;
        for i in 1..frames.len() {
            if min_dist[i] > min_dist[far] {
                far = i;
            }
        }
        centroids.push(frames[far].clone());
        let newest = centroids.last().unwrap();
        for (i, f) in frames.iter().enumerate() {
            let d = sq_dist(f, newest);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }

    let mut assign = vec![0usize; frames.len()];
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..100 {
        // assignment
        let mut inertia = 0.0;
        for (i, f) in frames.iter().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(f, &centroids[0]);
            for (c, cent) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(f, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assign[i] = best;
            inertia += best_d;
        }
        // update
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (f, &c) in frames.iter().zip(&assign) {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(f) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster from the farthest point
                let mut far = 0;
                let mut far_d = -1.0;
                for (i, f) in frames.iter().enumerate() {
                    let d = sq_dist(f, &centroids[assign[i]]);
                    if d > far_d {
                        far_d = d;
                        far = i;
                    }
                }
                centroids[c] = frames[far].clone();
            } else {
                for (ci, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *ci = s / counts[c] as f64;
                }
            }
        }
        if prev_inertia.is_finite() {
            let rel = (prev_inertia - inertia) / prev_inertia.max(1e-300);
            if rel.abs() < 1e-6 {
                break;
            }
        }
        prev_inertia = inertia;
    }

    // collapse guard: re-seed any duplicate centroid from the farthest point
    for round in 0..5 {
        let mut dup = None;
        'scan: for i in 0..k {
            for j in 0..i {
                if centroids[i] == centroids[j] {
                    dup = Some(i);
                    break 'scan;
                }
            }
        }
        let Some(i) = dup else { break };
        if round == 4 {
            return Err(Error::numerical("codebook centroids keep collapsing"));
        }
        let mut far = 0;
        let mut far_d = -1.0;
        for (idx, f) in frames.iter().enumerate() {
            let d = centroids.iter().map(|c| sq_dist(f, c)).fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far = idx;
            }
        }
        centroids[i] = frames[far].clone();
    }

    let cb = PrivCodebook { codewords: centroids };
    cb.validate()?;
    Ok(cb)
}

/// Normalized weights of the codewords under a conditional t, computed in
/// the log domain. Falls back to uniform weights (with a diagnostic on
/// stderr) if every density underflows to zero.
pub fn codeword_weights(codebook: &PrivCodebook, cond: &ConditionalTParams) -> Result<Vec<f64>> {
    let k = codebook.k();
    let mut logs = Vec::with_capacity(k);
    for c in &codebook.codewords {
        logs.push(cond.log_density(c)?);
    }
    let z = crate::inference::logsumexp(&logs);
    if !z.is_finite() {
        eprintln!("codeword_weights: all conditional densities underflowed; using uniform weights");
        return Ok(vec![1.0 / k as f64; k]);
    }
    let mut w: Vec<f64> = logs.iter().map(|l| (l - z).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    Ok(w)
}
