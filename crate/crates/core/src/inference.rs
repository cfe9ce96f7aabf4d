//! Exact log-space inference on the label-conditioned hidden chain.
//!
//! Conditioning on the label turns the graph into a plain chain, so
//! partition functions, posteriors and marginals are all computed exactly
//! by forward-backward recursions; no approximate message passing is
//! involved. Everything runs in the log domain with max-subtracted
//! log-sum-exp. Ties (Viterbi backtracking, argmax labels) always break
//! toward the lowest index so that reruns are reproducible.

use crate::error::{Error, Result};
use crate::model::{FeatureDims, ModelParams, SequenceSample};
use crate::robust::{conditional_t, codeword_weights, PrivCodebook, StudentTParams};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Default cap on the number of hidden paths the brute-force oracle will
/// enumerate per label.
pub const DEFAULT_ENUM_CAP: usize = 1_000_000;

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub(crate) fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Normalized per-class log posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior {
    log_probs: Vec<f64>,
}

impl ClassPosterior {
    /// Normalize a vector of unnormalized per-class log scores.
    pub fn from_log_scores(scores: Vec<f64>) -> Self {
        let z = logsumexp(&scores);
        ClassPosterior { log_probs: scores.iter().map(|s| s - z).collect() }
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_prob(&self, label: usize) -> f64 {
        self.log_probs[label]
    }

    pub fn n_labels(&self) -> usize {
        self.log_probs.len()
    }

    /// Most probable label; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (y, &lp) in self.log_probs.iter().enumerate() {
            if lp > self.log_probs[best] {
                best = y;
            }
        }
        best
    }
}

/// Forward-backward expectations of the hidden states given a label.
#[derive(Debug, Clone)]
pub struct HiddenMarginals {
    n_hidden: usize,
    /// `[T x n_hidden]`, `unary[j*H + a] = p(h_j = a | y, x, x*)`.
    unary: Vec<f64>,
    /// `[(T-1) x n_hidden x n_hidden]`, probabilities of consecutive pairs.
    pairwise: Vec<f64>,
}

impl HiddenMarginals {
    pub fn seq_len(&self) -> usize {
        self.unary.len() / self.n_hidden
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn unary(&self, j: usize, a: usize) -> f64 {
        self.unary[j * self.n_hidden + a]
    }

    pub fn pairwise(&self, j: usize, a: usize, b: usize) -> f64 {
        self.pairwise[(j * self.n_hidden + a) * self.n_hidden + b]
    }

    pub fn unary_row(&self, j: usize) -> &[f64] {
        &self.unary[j * self.n_hidden..(j + 1) * self.n_hidden]
    }
}

/// Label-independent part of the unary scores, `[T x n_hidden]` row-major:
/// observation term plus (optionally) the privileged term.
fn base_unary(
    sample: &SequenceSample,
    params: &ModelParams,
    use_privileged: bool,
    priv_override: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>> {
    let dims = params.dims();
    sample.validate(dims)?;
    let t = sample.len();
    let h = dims.n_hidden;
    let priv_frames: Option<&[Vec<f64>]> = match priv_override {
        Some(p) => {
            if p.len() != t || p.iter().any(|f| f.len() != dims.m_xstar) {
                return Err(Error::invalid("privileged override has wrong shape"));
            }
            Some(p)
        }
        None if use_privileged => sample.privileged.as_deref(),
        None => None,
    };
    let mut table = vec![0.0; t * h];
    for j in 0..t {
        let frame = &sample.frames[j];
        for a in 0..h {
            let mut s = 0.0;
            for (w, x) in params.theta2_row(a).iter().zip(frame) {
                s += w * x;
            }
            if let Some(pf) = priv_frames {
                for (w, x) in params.theta3_row(a).iter().zip(&pf[j]) {
                    s += w * x;
                }
            }
            table[j * h + a] = s;
        }
    }
    Ok(table)
}

/// Forward recursion for one label over a precomputed base table.
fn class_log_partition_from_base(base: &[f64], params: &ModelParams, label: usize) -> f64 {
    let h = params.dims().n_hidden;
    let t = base.len() / h;
    let omega = params.omega_slice(label);
    let mut alpha: Vec<f64> = (0..h).map(|a| base[a] + params.theta1(label, a)).collect();
    let mut next = vec![0.0; h];
    let mut vals = vec![0.0; h];
    for j in 1..t {
        for b in 0..h {
            let mut m = f64::NEG_INFINITY;
            for a in 0..h {
                let v = alpha[a] + omega[a * h + b];
                vals[a] = v;
                if v > m {
                    m = v;
                }
            }
            let mut s = 0.0;
            for a in 0..h {
                s += (vals[a] - m).exp();
            }
            next[b] = base[j * h + b] + params.theta1(label, b) + m + s.ln();
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    logsumexp(&alpha)
}

/// `log sum_h exp(E(y, h | x, x*; w))`, exact, via the forward recursion.
pub fn class_log_partition(
    label: usize,
    sample: &SequenceSample,
    params: &ModelParams,
    use_privileged: bool,
) -> Result<f64> {
    if label >= params.dims().n_labels {
        return Err(Error::invalid(format!("label {label} out of range")));
    }
    let base = base_unary(sample, params, use_privileged, None)?;
    Ok(class_log_partition_from_base(&base, params, label))
}

/// Log-partition over labels and hidden paths.
pub fn log_partition(
    sample: &SequenceSample,
    params: &ModelParams,
    use_privileged: bool,
) -> Result<f64> {
    let base = base_unary(sample, params, use_privileged, None)?;
    let scores: Vec<f64> = (0..params.dims().n_labels)
        .map(|y| class_log_partition_from_base(&base, params, y))
        .collect();
    Ok(logsumexp(&scores))
}

fn posterior_from_base(base: &[f64], params: &ModelParams) -> ClassPosterior {
    let scores: Vec<f64> = (0..params.dims().n_labels)
        .map(|y| class_log_partition_from_base(base, params, y))
        .collect();
    ClassPosterior::from_log_scores(scores)
}

/// Class posterior `p(y | x, x*; w)`.
pub fn posterior(
    sample: &SequenceSample,
    params: &ModelParams,
    use_privileged: bool,
) -> Result<ClassPosterior> {
    let base = base_unary(sample, params, use_privileged, None)?;
    Ok(posterior_from_base(&base, params))
}

/// Exact unary and pairwise hidden-state marginals given a label.
pub fn marginals(
    label: usize,
    sample: &SequenceSample,
    params: &ModelParams,
    use_privileged: bool,
) -> Result<HiddenMarginals> {
    if label >= params.dims().n_labels {
        return Err(Error::invalid(format!("label {label} out of range")));
    }
    let base = base_unary(sample, params, use_privileged, None)?;
    Ok(marginals_from_base(&base, params, label))
}

fn marginals_from_base(base: &[f64], params: &ModelParams, label: usize) -> HiddenMarginals {
    let h = params.dims().n_hidden;
    let t = base.len() / h;
    let omega = params.omega_slice(label);
    // full unary score including the label term
    let score = |j: usize, a: usize| base[j * h + a] + params.theta1(label, a);

    let mut alpha = vec![f64::NEG_INFINITY; t * h];
    for a in 0..h {
        alpha[a] = score(0, a);
    }
    let mut vals = vec![0.0; h];
    for j in 1..t {
        for b in 0..h {
            for a in 0..h {
                vals[a] = alpha[(j - 1) * h + a] + omega[a * h + b];
            }
            alpha[j * h + b] = score(j, b) + logsumexp(&vals);
        }
    }
    let mut beta = vec![0.0; t * h];
    for j in (0..t.saturating_sub(1)).rev() {
        for a in 0..h {
            for b in 0..h {
                vals[b] = omega[a * h + b] + score(j + 1, b) + beta[(j + 1) * h + b];
            }
            beta[j * h + a] = logsumexp(&vals);
        }
    }
    let log_z = logsumexp(&alpha[(t - 1) * h..]);

    let mut unary = vec![0.0; t * h];
    for j in 0..t {
        for a in 0..h {
            unary[j * h + a] = (alpha[j * h + a] + beta[j * h + a] - log_z).exp();
        }
    }
    let mut pairwise = vec![0.0; t.saturating_sub(1) * h * h];
    for j in 0..t.saturating_sub(1) {
        for a in 0..h {
            for b in 0..h {
                let lp = alpha[j * h + a]
                    + omega[a * h + b]
                    + score(j + 1, b)
                    + beta[(j + 1) * h + b]
                    - log_z;
                pairwise[(j * h + a) * h + b] = lp.exp();
            }
        }
    }
    HiddenMarginals { n_hidden: h, unary, pairwise }
}

/// Viterbi maximum: the highest-energy hidden path for a fixed label and
/// one argmax path, ties broken toward the lowest hidden-state index.
pub fn map_energy(
    label: usize,
    sample: &SequenceSample,
    params: &ModelParams,
    use_privileged: bool,
) -> Result<(f64, Vec<usize>)> {
    if label >= params.dims().n_labels {
        return Err(Error::invalid(format!("label {label} out of range")));
    }
    let base = base_unary(sample, params, use_privileged, None)?;
    Ok(map_energy_from_base(&base, params, label))
}

fn map_energy_from_base(base: &[f64], params: &ModelParams, label: usize) -> (f64, Vec<usize>) {
    let h = params.dims().n_hidden;
    let t = base.len() / h;
    let omega = params.omega_slice(label);
    let score = |j: usize, a: usize| base[j * h + a] + params.theta1(label, a);

    let mut delta: Vec<f64> = (0..h).map(|a| score(0, a)).collect();
    let mut back = vec![0usize; t * h];
    let mut next = vec![0.0; h];
    for j in 1..t {
        for b in 0..h {
            let mut best_a = 0;
            let mut best = delta[0] + omega[b];
            for a in 1..h {
                let v = delta[a] + omega[a * h + b];
                if v > best {
                    best = v;
                    best_a = a;
                }
            }
            next[b] = score(j, b) + best;
            back[j * h + b] = best_a;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut best_b = 0;
    for b in 1..h {
        if delta[b] > delta[best_b] {
            best_b = b;
        }
    }
    let mut path = vec![0usize; t];
    path[t - 1] = best_b;
    for j in (1..t).rev() {
        path[j - 1] = back[j * h + path[j]];
    }
    (delta[best_b], path)
}

/// Per-label log partitions plus marginals, computed over a single base
/// table. This is what the likelihood gradient consumes.
pub(crate) fn all_class_stats(
    sample: &SequenceSample,
    params: &ModelParams,
    use_privileged: bool,
) -> Result<(Vec<f64>, Vec<HiddenMarginals>)> {
    let base = base_unary(sample, params, use_privileged, None)?;
    let n_labels = params.dims().n_labels;
    let mut clps = Vec::with_capacity(n_labels);
    let mut margs = Vec::with_capacity(n_labels);
    for y in 0..n_labels {
        clps.push(class_log_partition_from_base(&base, params, y));
        margs.push(marginals_from_base(&base, params, y));
    }
    Ok((clps, margs))
}

/// Posterior by explicit enumeration of every (label, hidden path)
/// configuration. Independent oracle for the recursions above.
pub fn brute_force_posterior(
    sample: &SequenceSample,
    params: &ModelParams,
    use_privileged: bool,
    cap: usize,
) -> Result<ClassPosterior> {
    let dims = *params.dims();
    sample.validate(&dims)?;
    let t = sample.len();
    let h = dims.n_hidden;
    let n_paths = (h as f64).powi(t as i32);
    if n_paths > cap as f64 {
        return Err(Error::Capacity(format!(
            "enumeration of {h}^{t} paths exceeds cap {cap}"
        )));
    }
    let mut scores = Vec::with_capacity(dims.n_labels);
    let mut path = vec![0usize; t];
    for y in 0..dims.n_labels {
        let mut energies = Vec::with_capacity(n_paths as usize);
        path.fill(0);
        loop {
            energies.push(params.energy(y, &path, sample, use_privileged)?);
            // odometer increment
            let mut j = 0;
            loop {
                if j == t {
                    break;
                }
                path[j] += 1;
                if path[j] < h {
                    break;
                }
                path[j] = 0;
                j += 1;
            }
            if j == t {
                break;
            }
        }
        scores.push(logsumexp(&energies));
    }
    Ok(ClassPosterior::from_log_scores(scores))
}

/// How to treat the missing privileged channel at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictMode {
    /// Marginalize over the codebook: each frame's privileged term is
    /// replaced by its expectation under the conditional t restricted to
    /// the codewords.
    Codebook,
    /// Monte-Carlo estimate of the marginalization: average the class
    /// posteriors over `samples` full-sequence draws from the conditional
    /// t. Slow; used to audit the codebook approximation.
    MonteCarlo { samples: usize, seed: u64 },
    /// Ignore the privileged channel entirely.
    RegularOnly,
}

/// Predict a label for a sequence whose privileged channel is missing (or
/// deliberately ignored), marginalizing the privileged term per `mode`.
pub fn predict(
    sample: &SequenceSample,
    params: &ModelParams,
    joint: Option<&StudentTParams>,
    codebook: Option<&PrivCodebook>,
    mode: &PredictMode,
) -> Result<(usize, ClassPosterior)> {
    let dims = params.dims();
    match mode {
        PredictMode::RegularOnly => {
            let post = posterior(sample, params, false)?;
            Ok((post.argmax(), post))
        }
        PredictMode::Codebook => {
            let joint = joint.ok_or_else(|| {
                Error::config("codebook prediction requires fitted joint t-parameters")
            })?;
            let codebook = codebook
                .ok_or_else(|| Error::config("codebook prediction requires a fitted codebook"))?;
            check_priv_model(dims, joint, Some(codebook))?;
            let mut expected = Vec::with_capacity(sample.len());
            for frame in &sample.frames {
                let cond = conditional_t(joint, frame)?;
                let weights = codeword_weights(codebook, &cond)?;
                let mut e = vec![0.0; dims.m_xstar];
                for (w, c) in weights.iter().zip(&codebook.codewords) {
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei += w * ci;
                    }
                }
                expected.push(e);
            }
            let base = base_unary(sample, params, true, Some(&expected))?;
            let post = posterior_from_base(&base, params);
            Ok((post.argmax(), post))
        }
        PredictMode::MonteCarlo { samples, seed } => {
            let joint = joint.ok_or_else(|| {
                Error::config("monte-carlo prediction requires fitted joint t-parameters")
            })?;
            check_priv_model(dims, joint, None)?;
            if *samples == 0 {
                return Err(Error::config("monte-carlo prediction needs samples >= 1"));
            }
            let t = sample.len();
            let p = dims.m_xstar;
            // conditional t per frame, with a Cholesky factor for sampling
            let mut frame_draws = Vec::with_capacity(t);
            for frame in &sample.frames {
                let cond = conditional_t(joint, frame)?;
                let sigma = DMatrix::from_row_slice(p, p, &cond.sigma_star);
                let chol = Cholesky::new(sigma).ok_or_else(|| {
                    Error::numerical("conditional scale matrix is not positive definite")
                })?;
                frame_draws.push((cond, chol));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut acc = vec![f64::NEG_INFINITY; dims.n_labels];
            let mut drawn = vec![vec![0.0; p]; t];
            for _ in 0..*samples {
                for (j, (cond, chol)) in frame_draws.iter().enumerate() {
                    draw_t(&mut rng, cond.nu_star, &cond.mu_star, chol, &mut drawn[j]);
                }
                let base = base_unary(sample, params, true, Some(&drawn))?;
                let post = posterior_from_base(&base, params);
                for y in 0..dims.n_labels {
                    acc[y] = logsumexp2(acc[y], post.log_prob(y));
                }
            }
            let post = ClassPosterior::from_log_scores(acc);
            Ok((post.argmax(), post))
        }
    }
}

fn check_priv_model(
    dims: &FeatureDims,
    joint: &StudentTParams,
    codebook: Option<&PrivCodebook>,
) -> Result<()> {
    if dims.m_xstar == 0 {
        return Err(Error::config(
            "model has no privileged channel; use regular-only prediction",
        ));
    }
    if joint.dim() != dims.m_xstar + dims.m_x {
        return Err(Error::schema(format!(
            "joint t has dimension {}, model expects {}",
            joint.dim(),
            dims.m_xstar + dims.m_x
        )));
    }
    if let Some(cb) = codebook {
        if cb.codewords.iter().any(|c| c.len() != dims.m_xstar) {
            return Err(Error::schema("codebook width does not match m_xstar"));
        }
    }
    Ok(())
}

/// One multivariate-t draw: `mu + L z * sqrt(nu / u)` with `u ~ chi^2_nu`.
fn draw_t(rng: &mut ChaCha8Rng, nu: f64, mu: &[f64], chol: &Cholesky<f64, nalgebra::Dyn>, out: &mut [f64]) {
    let p = mu.len();
    let z = DVector::from_fn(p, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    let u: f64 = ChiSquared::new(nu).expect("valid dof").sample(rng);
    let scaled = chol.l() * z * (nu / u).sqrt();
    for i in 0..p {
        out[i] = mu[i] + scaled[i];
    }
}
