//! Synthetic sequence generator.
//!
//! Each class gets its own sticky Markov chain over a shared set of
//! hidden states. Regular frames are Gaussian emissions around
//! state-dependent means (plus a small class-dependent shift), so the
//! regular channel identifies the state only noisily. Privileged frames
//! encode the true hidden state through a fixed projection, blended with
//! noise by `rho`, and a fraction `outlier_frac` of them is replaced by
//! wild draws at `outlier_scale`. Contamination decisions use a per-frame
//! child generator, so two specs differing only in `outlier_frac` agree
//! on every clean value.

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{FeatureDims, SequenceSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Magnitude of the class-dependent emission shift. Zero keeps all class
/// identity in the dynamics; states share one emission table.
const CLASS_SHIFT: f64 = 0.0;
/// Norm of each state's privileged encoding. Sized so that, after the
/// `(1 - rho)` noise blend, the privileged channel identifies the state
/// about as reliably as a moderately noisy regular channel does; a much
/// larger scale lets training lean on the privileged weights alone.
const PRIV_SCALE: f64 = 0.25;
/// Self-transition probability of every chain.
const STICKINESS: f64 = 0.5;
/// Probability of the class-specific preferred transition.
const PREFERRED: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_labels: usize,
    pub n_hidden_true: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub m_x: usize,
    pub m_xstar: usize,
    pub per_class: usize,
    /// Emission noise scale of the regular channel.
    pub noise: f64,
    /// Privileged informativeness in [0, 1]: 1 = exact state encodings.
    pub rho: f64,
    /// Fraction of privileged frames replaced by outliers, in [0, 1).
    pub outlier_frac: f64,
    pub outlier_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_labels: 4,
            n_hidden_true: 5,
            t_min: 10,
            t_max: 20,
            m_x: 6,
            m_xstar: 5,
            per_class: 80,
            noise: 1.0,
            rho: 0.9,
            outlier_frac: 0.0,
            outlier_scale: 20.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_labels < 1
            || self.n_hidden_true < 1
            || self.m_x < 1
            || self.m_xstar < 1
            || self.per_class < 1
        {
            return Err(Error::config("all synthetic counts must be >= 1"));
        }
        if self.t_min < 1 || self.t_min > self.t_max {
            return Err(Error::config("need 1 <= t_min <= t_max"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::config("rho must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.outlier_frac) {
            return Err(Error::config("outlier_frac must lie in [0, 1)"));
        }
        if !(self.noise >= 0.0) || !self.outlier_scale.is_finite() {
            return Err(Error::config("bad noise or outlier scale"));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generate a dataset; the companion function also returns the true
/// hidden-state trace of every sequence (for tests and audits).
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    Ok(synth_generate_with_states(spec)?.0)
}

pub fn synth_generate_with_states(spec: &SynthSpec) -> Result<(Dataset, Vec<Vec<usize>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.n_hidden_true;

    // state-dependent emission means, shared across classes
    let base: Vec<Vec<f64>> = (0..h)
        .map(|_| (0..spec.m_x).map(|_| normal(&mut rng)).collect())
        .collect();
    // small class-dependent shift
    let class_dir: Vec<Vec<f64>> = (0..spec.n_labels)
        .map(|_| {
            let v: Vec<f64> = (0..spec.m_x).map(|_| normal(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| CLASS_SHIFT * x / n).collect()
        })
        .collect();
    // projection of the one-hot state encoding into the privileged space
    let proj: Vec<Vec<f64>> = (0..h)
        .map(|_| {
            let v: Vec<f64> = (0..spec.m_xstar).map(|_| normal(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| PRIV_SCALE * x / n).collect()
        })
        .collect();

    // per-class transition rows
    let trans: Vec<Vec<Vec<f64>>> = (0..spec.n_labels)
        .map(|c| {
            (0..h)
                .map(|s| {
                    let mut row = vec![0.0; h];
                    if h == 1 {
                        row[0] = 1.0;
                        return row;
                    }
                    let shift = 1 + (c % (h - 1).max(1));
                    let target = (s + shift) % h;
                    let rest = if h > 2 {
                        (1.0 - STICKINESS - PREFERRED) / (h - 2) as f64
                    } else {
                        0.0
                    };
                    for (next, r) in row.iter_mut().enumerate() {
                        *r = if next == s {
                            STICKINESS
                        } else if next == target {
                            PREFERRED + if h == 2 { 1.0 - STICKINESS - PREFERRED } else { 0.0 }
                        } else {
                            rest
                        };
                    }
                    row
                })
                .collect()
        })
        .collect();

    let mut samples = Vec::with_capacity(spec.n_labels * spec.per_class);
    let mut traces = Vec::with_capacity(spec.n_labels * spec.per_class);
    let mut index = 0usize;
    for label in 0..spec.n_labels {
        for _ in 0..spec.per_class {
            let t_len = rng.random_range(spec.t_min..=spec.t_max);
            let mut states = Vec::with_capacity(t_len);
            let mut state = rng.random_range(0..h);
            let mut frames = Vec::with_capacity(t_len);
            let mut privileged = Vec::with_capacity(t_len);
            for j in 0..t_len {
                if j > 0 {
                    let u: f64 = rng.random();
                    let row = &trans[label][state];
                    let mut acc = 0.0;
                    let mut next = h - 1;
                    for (k, p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            next = k;
                            break;
                        }
                    }
                    state = next;
                }
                states.push(state);
                let frame: Vec<f64> = (0..spec.m_x)
                    .map(|d| base[state][d] + class_dir[label][d] + spec.noise * normal(&mut rng))
                    .collect();
                frames.push(frame);
                let clean: Vec<f64> = (0..spec.m_xstar)
                    .map(|d| spec.rho * proj[state][d] + (1.0 - spec.rho) * normal(&mut rng))
                    .collect();
                privileged.push(clean);
            }
            samples.push(SequenceSample {
                id: format!("synth-{index:04}"),
                frames,
                privileged: Some(privileged),
                label,
            });
            traces.push(states);
            index += 1;
        }
    }

    // Contamination pass: outliers are drawn at `outlier_scale` times the
    // clean per-dimension standard deviation, from per-frame child
    // generators, so the clean values do not depend on outlier_frac.
    if spec.outlier_frac > 0.0 {
        let mut clean_std = vec![0.0; spec.m_xstar];
        let n_frames: usize = samples.iter().map(|s| s.len()).sum();
        for d in 0..spec.m_xstar {
            let mut mean = 0.0;
            for s in &samples {
                for pf in s.privileged.as_ref().unwrap() {
                    mean += pf[d];
                }
            }
            mean /= n_frames as f64;
            let mut var = 0.0;
            for s in &samples {
                for pf in s.privileged.as_ref().unwrap() {
                    var += (pf[d] - mean) * (pf[d] - mean);
                }
            }
            clean_std[d] = (var / n_frames as f64).sqrt().max(1e-12);
        }
        for (index, s) in samples.iter_mut().enumerate() {
            let privileged = s.privileged.as_mut().unwrap();
            for (j, pf) in privileged.iter_mut().enumerate() {
                let mut child = ChaCha8Rng::seed_from_u64(
                    spec.seed ^ splitmix((index as u64) << 24 | j as u64),
                );
                let u: f64 = child.random();
                if u < spec.outlier_frac {
                    for (v, sd) in pf.iter_mut().zip(&clean_std) {
                        *v = spec.outlier_scale * sd * normal(&mut child);
                    }
                }
            }
        }
    }

    let dims = FeatureDims {
        m_x: spec.m_x,
        m_xstar: spec.m_xstar,
        n_labels: spec.n_labels,
        n_hidden: 1,
    };
    Ok((Dataset::new(samples, dims, None)?, traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_one_gives_exact_state_encodings() {
        let spec = SynthSpec {
            n_labels: 2,
            per_class: 5,
            rho: 1.0,
            outlier_frac: 0.0,
            seed: 3,
            ..Default::default()
        };
        let (ds, states) = synth_generate_with_states(&spec).unwrap();
        // frames in the same hidden state share one exact privileged code
        let mut code: Vec<Option<Vec<f64>>> = vec![None; spec.n_hidden_true];
        for (s, trace) in ds.samples.iter().zip(&states) {
            for (j, &st) in trace.iter().enumerate() {
                let pf = &s.privileged.as_ref().unwrap()[j];
                match &code[st] {
                    None => code[st] = Some(pf.clone()),
                    Some(c) => assert_eq!(c, pf),
                }
            }
        }
    }

    #[test]
    fn rho_zero_decouples_privileged_from_labels() {
        let spec = SynthSpec {
            n_labels: 2,
            per_class: 150,
            rho: 0.0,
            seed: 5,
            ..Default::default()
        };
        let ds = synth_generate(&spec).unwrap();
        // histogram mutual information between label and the sign pattern
        // of the first privileged dimension
        let mut joint = [[0f64; 2]; 2];
        let mut n = 0f64;
        for s in &ds.samples {
            for pf in s.privileged.as_ref().unwrap() {
                let bin = usize::from(pf[0] > 0.0);
                joint[s.label][bin] += 1.0;
                n += 1.0;
            }
        }
        let mut mi = 0.0;
        for y in 0..2 {
            for b in 0..2 {
                let pxy = joint[y][b] / n;
                if pxy == 0.0 {
                    continue;
                }
                let py: f64 = (joint[y][0] + joint[y][1]) / n;
                let pb: f64 = (joint[0][b] + joint[1][b]) / n;
                mi += pxy * (pxy / (py * pb)).ln();
            }
        }
        assert!(mi.abs() < 0.01, "mutual information {mi}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec { per_class: 4, seed: 11, ..Default::default() };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        let other = SynthSpec { seed: 12, ..spec };
        assert_ne!(synth_generate(&spec).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn contamination_only_touches_flagged_frames() {
        let clean_spec = SynthSpec { per_class: 6, seed: 21, outlier_frac: 0.0, ..Default::default() };
        let dirty_spec = SynthSpec { outlier_frac: 0.25, ..clean_spec.clone() };
        let clean = synth_generate(&clean_spec).unwrap();
        let dirty = synth_generate(&dirty_spec).unwrap();
        let mut changed = 0;
        let mut total = 0;
        for (a, b) in clean.samples.iter().zip(&dirty.samples) {
            assert_eq!(a.frames, b.frames); // regular channel untouched
            for (pa, pb) in a
                .privileged
                .as_ref()
                .unwrap()
                .iter()
                .zip(b.privileged.as_ref().unwrap())
            {
                total += 1;
                if pa != pb {
                    changed += 1;
                }
            }
        }
        let frac = changed as f64 / total as f64;
        assert!(frac > 0.1 && frac < 0.45, "contaminated fraction {frac}");
    }

    #[test]
    fn spec_validation() {
        let mut spec = SynthSpec::default();
        spec.rho = 1.5;
        assert!(spec.validate().is_err());
        spec.rho = 0.5;
        spec.outlier_frac = 1.0;
        assert!(spec.validate().is_err());
        spec.outlier_frac = 0.0;
        spec.t_min = 30;
        assert!(spec.validate().is_err());
    }
}
