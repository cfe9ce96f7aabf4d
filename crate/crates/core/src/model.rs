//! Domain types and the energy function of the label-conditioned hidden
//! chain.
//!
//! The model scores a (label, hidden path) configuration with a sum of
//! per-frame unary potentials and per-edge transition potentials. The
//! unary potential splits into a label term, an observation term and an
//! optional privileged term; the transition weights form one matrix per
//! label. All of it is linear in the flattened weight vector, which is
//! what the trainers differentiate.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Problem dimensions: feature widths and the sizes of the label and
/// hidden-state sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    /// Regular (always observed) feature width per frame.
    pub m_x: usize,
    /// Privileged feature width per frame; 0 means the model has no
    /// privileged channel at all.
    pub m_xstar: usize,
    /// Number of class labels.
    pub n_labels: usize,
    /// Number of hidden states.
    pub n_hidden: usize,
}

impl FeatureDims {
    pub fn new(m_x: usize, m_xstar: usize, n_labels: usize, n_hidden: usize) -> Result<Self> {
        let dims = FeatureDims { m_x, m_xstar, n_labels, n_hidden };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_x < 1 || self.n_labels < 1 || self.n_hidden < 1 {
            return Err(Error::invalid(format!(
                "m_x, n_labels and n_hidden must all be >= 1, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// Length of the flattened weight vector:
    /// `n_labels*n_hidden + n_hidden*m_x + n_hidden*m_xstar + n_labels*n_hidden^2`.
    pub fn param_len(&self) -> usize {
        self.n_labels * self.n_hidden
            + self.n_hidden * self.m_x
            + self.n_hidden * self.m_xstar
            + self.n_labels * self.n_hidden * self.n_hidden
    }
}

/// One labeled observation sequence, with an optional privileged channel
/// of the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub id: String,
    /// T frames of `m_x` features each.
    pub frames: Vec<Vec<f64>>,
    /// When present: T frames of `m_xstar` features each.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub privileged: Option<Vec<Vec<f64>>>,
    pub label: usize,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn has_privileged(&self) -> bool {
        self.privileged.is_some()
    }

    pub fn validate(&self, dims: &FeatureDims) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid(format!("sample {}: empty sequence", self.id)));
        }
        if self.label >= dims.n_labels {
            return Err(Error::invalid(format!(
                "sample {}: label {} out of range (n_labels = {})",
                self.id, self.label, dims.n_labels
            )));
        }
        for (j, frame) in self.frames.iter().enumerate() {
            if frame.len() != dims.m_x {
                return Err(Error::invalid(format!(
                    "sample {}: frame {} has {} features, expected {}",
                    self.id,
                    j,
                    frame.len(),
                    dims.m_x
                )));
            }
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::schema(format!(
                    "sample {}: non-finite entry in frame {}",
                    self.id, j
                )));
            }
        }
        if let Some(priv_frames) = &self.privileged {
            if dims.m_xstar == 0 {
                return Err(Error::invalid(format!(
                    "sample {}: carries privileged data but dims.m_xstar = 0",
                    self.id
                )));
            }
            if priv_frames.len() != self.frames.len() {
                return Err(Error::invalid(format!(
                    "sample {}: {} privileged frames for {} regular frames",
                    self.id,
                    priv_frames.len(),
                    self.frames.len()
                )));
            }
            for (j, pf) in priv_frames.iter().enumerate() {
                if pf.len() != dims.m_xstar {
                    return Err(Error::invalid(format!(
                        "sample {}: privileged frame {} has {} features, expected {}",
                        self.id,
                        j,
                        pf.len(),
                        dims.m_xstar
                    )));
                }
                if pf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::schema(format!(
                        "sample {}: non-finite entry in privileged frame {}",
                        self.id, j
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The full weight vector, stored by block.
///
/// Flattening order is fixed: `theta1` row-major (label-major), then
/// `theta2` (hidden-major), then `theta3` (hidden-major), then `omega`
/// (label-major, then source state, then target state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    dims: FeatureDims,
    /// `[n_labels x n_hidden]` label weights.
    theta1: Vec<f64>,
    /// `[n_hidden x m_x]` observation weights.
    theta2: Vec<f64>,
    /// `[n_hidden x m_xstar]` privileged weights.
    theta3: Vec<f64>,
    /// `[n_labels x n_hidden x n_hidden]` per-label transition weights.
    omega: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: FeatureDims) -> Self {
        ModelParams {
            dims,
            theta1: vec![0.0; dims.n_labels * dims.n_hidden],
            theta2: vec![0.0; dims.n_hidden * dims.m_x],
            theta3: vec![0.0; dims.n_hidden * dims.m_xstar],
            omega: vec![0.0; dims.n_labels * dims.n_hidden * dims.n_hidden],
        }
    }

    /// Entries drawn i.i.d. uniform on `[-scale, scale]` from a ChaCha
    /// stream seeded with `seed`; `scale = 0` gives all zeros.
    pub fn init(dims: FeatureDims, seed: u64, scale: f64) -> Self {
        let mut params = Self::zeros(dims);
        if scale == 0.0 {
            return params;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in [
            &mut params.theta1,
            &mut params.theta2,
            &mut params.theta3,
            &mut params.omega,
        ] {
            for v in block.iter_mut() {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * scale;
            }
        }
        params
    }

    pub fn dims(&self) -> &FeatureDims {
        &self.dims
    }

    #[inline]
    pub fn theta1(&self, label: usize, hidden: usize) -> f64 {
        self.theta1[label * self.dims.n_hidden + hidden]
    }

    #[inline]
    pub fn theta2_row(&self, hidden: usize) -> &[f64] {
        let m = self.dims.m_x;
        &self.theta2[hidden * m..(hidden + 1) * m]
    }

    #[inline]
    pub fn theta3_row(&self, hidden: usize) -> &[f64] {
        let m = self.dims.m_xstar;
        &self.theta3[hidden * m..(hidden + 1) * m]
    }

    #[inline]
    pub fn omega(&self, label: usize, from: usize, to: usize) -> f64 {
        let h = self.dims.n_hidden;
        self.omega[(label * h + from) * h + to]
    }

    /// Transition block of one label, row-major `[from][to]`.
    #[inline]
    pub fn omega_slice(&self, label: usize) -> &[f64] {
        let h2 = self.dims.n_hidden * self.dims.n_hidden;
        &self.omega[label * h2..(label + 1) * h2]
    }

    pub fn set_theta1(&mut self, label: usize, hidden: usize, v: f64) {
        self.theta1[label * self.dims.n_hidden + hidden] = v;
    }

    pub fn set_theta2(&mut self, hidden: usize, dim: usize, v: f64) {
        self.theta2[hidden * self.dims.m_x + dim] = v;
    }

    pub fn set_theta3(&mut self, hidden: usize, dim: usize, v: f64) {
        self.theta3[hidden * self.dims.m_xstar + dim] = v;
    }

    pub fn set_omega(&mut self, label: usize, from: usize, to: usize, v: f64) {
        let h = self.dims.n_hidden;
        self.omega[(label * h + from) * h + to] = v;
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = &self.dims;
        if self.theta1.len() != d.n_labels * d.n_hidden
            || self.theta2.len() != d.n_hidden * d.m_x
            || self.theta3.len() != d.n_hidden * d.m_xstar
            || self.omega.len() != d.n_labels * d.n_hidden * d.n_hidden
        {
            return Err(Error::invalid("parameter block lengths do not match dims"));
        }
        let finite = self.theta1.iter().chain(&self.theta2).chain(&self.theta3).chain(&self.omega);
        for v in finite {
            if !v.is_finite() {
                return Err(Error::numerical("non-finite model parameter"));
            }
        }
        Ok(())
    }

    /// Unary potential of hidden state `hidden` at a frame, conditioned on
    /// `label`. The privileged term is dropped, not imputed, when
    /// `priv_frame` is `None`.
    pub fn unary_potential(
        &self,
        label: usize,
        hidden: usize,
        frame: &[f64],
        priv_frame: Option<&[f64]>,
    ) -> Result<f64> {
        let d = &self.dims;
        if label >= d.n_labels || hidden >= d.n_hidden {
            return Err(Error::invalid(format!(
                "index out of range: label {label} / hidden {hidden} for {d:?}"
            )));
        }
        if frame.len() != d.m_x {
            return Err(Error::invalid(format!(
                "frame has {} features, expected {}",
                frame.len(),
                d.m_x
            )));
        }
        if let Some(pf) = priv_frame {
            if pf.len() != d.m_xstar {
                return Err(Error::invalid(format!(
                    "privileged frame has {} features, expected {}",
                    pf.len(),
                    d.m_xstar
                )));
            }
        }
        let mut score = self.theta1(label, hidden);
        score += dot(self.theta2_row(hidden), frame);
        if let Some(pf) = priv_frame {
            score += dot(self.theta3_row(hidden), pf);
        }
        Ok(score)
    }

    /// Per-label transition score between consecutive hidden states.
    pub fn pairwise_potential(&self, label: usize, from: usize, to: usize) -> Result<f64> {
        let d = &self.dims;
        if label >= d.n_labels || from >= d.n_hidden || to >= d.n_hidden {
            return Err(Error::invalid(format!(
                "index out of range: ({label},{from},{to}) for {d:?}"
            )));
        }
        Ok(self.omega(label, from, to))
    }

    /// Total energy of a (label, hidden path) configuration: sum of the
    /// per-frame unary potentials plus the chain's edge potentials.
    pub fn energy(
        &self,
        label: usize,
        hidden_path: &[usize],
        sample: &SequenceSample,
        use_privileged: bool,
    ) -> Result<f64> {
        if hidden_path.len() != sample.len() {
            return Err(Error::invalid(format!(
                "hidden path length {} does not match sequence length {}",
                hidden_path.len(),
                sample.len()
            )));
        }
        let priv_frames = if use_privileged { sample.privileged.as_deref() } else { None };
        let mut total = 0.0;
        for (j, &h) in hidden_path.iter().enumerate() {
            let pf = priv_frames.map(|p| p[j].as_slice());
            total += self.unary_potential(label, h, &sample.frames[j], pf)?;
        }
        for j in 0..hidden_path.len().saturating_sub(1) {
            total += self.pairwise_potential(label, hidden_path[j], hidden_path[j + 1])?;
        }
        Ok(total)
    }

    /// Flatten into a single weight vector in the documented block order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dims.param_len());
        v.extend_from_slice(&self.theta1);
        v.extend_from_slice(&self.theta2);
        v.extend_from_slice(&self.theta3);
        v.extend_from_slice(&self.omega);
        v
    }

    /// Inverse of [`ModelParams::to_vec`].
    pub fn from_vec(v: &[f64], dims: FeatureDims) -> Result<Self> {
        dims.validate()?;
        if v.len() != dims.param_len() {
            return Err(Error::invalid(format!(
                "weight vector has length {}, dims require {}",
                v.len(),
                dims.param_len()
            )));
        }
        let n1 = dims.n_labels * dims.n_hidden;
        let n2 = dims.n_hidden * dims.m_x;
        let n3 = dims.n_hidden * dims.m_xstar;
        Ok(ModelParams {
            dims,
            theta1: v[..n1].to_vec(),
            theta2: v[n1..n1 + n2].to_vec(),
            theta3: v[n1 + n2..n1 + n2 + n3].to_vec(),
            omega: v[n1 + n2 + n3..].to_vec(),
        })
    }

    /// Squared Euclidean norm of the flattened weight vector.
    pub fn squared_norm(&self) -> f64 {
        self.theta1
            .iter()
            .chain(&self.theta2)
            .chain(&self.theta3)
            .chain(&self.omega)
            .map(|v| v * v)
            .sum()
    }
}

/// Sufficient-statistic counts of a fixed (label, hidden path)
/// configuration, flattened in the same order as the weights, so that
/// `energy == dot(weights, features)`.
pub fn path_features(
    sample: &SequenceSample,
    label: usize,
    hidden_path: &[usize],
    dims: &FeatureDims,
    use_privileged: bool,
) -> Result<Vec<f64>> {
    if hidden_path.len() != sample.len() {
        return Err(Error::invalid("hidden path length mismatch"));
    }
    if label >= dims.n_labels || hidden_path.iter().any(|&h| h >= dims.n_hidden) {
        return Err(Error::invalid("index out of range in path features"));
    }
    let mut f = vec![0.0; dims.param_len()];
    let n1 = dims.n_labels * dims.n_hidden;
    let n2 = dims.n_hidden * dims.m_x;
    let n3 = dims.n_hidden * dims.m_xstar;
    let priv_frames = if use_privileged { sample.privileged.as_deref() } else { None };
    for (j, &h) in hidden_path.iter().enumerate() {
        f[label * dims.n_hidden + h] += 1.0;
        for (d, &x) in sample.frames[j].iter().enumerate() {
            f[n1 + h * dims.m_x + d] += x;
        }
        if let Some(pf) = priv_frames {
            for (d, &x) in pf[j].iter().enumerate() {
                f[n1 + n2 + h * dims.m_xstar + d] += x;
            }
        }
    }
    let omega_base = n1 + n2 + n3;
    for j in 0..hidden_path.len().saturating_sub(1) {
        let idx = (label * dims.n_hidden + hidden_path[j]) * dims.n_hidden + hidden_path[j + 1];
        f[omega_base + idx] += 1.0;
    }
    Ok(f)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dims() -> FeatureDims {
        FeatureDims::new(2, 1, 2, 3).unwrap()
    }

    fn sample(frames: Vec<Vec<f64>>, privileged: Option<Vec<Vec<f64>>>, label: usize) -> SequenceSample {
        SequenceSample { id: "t".into(), frames, privileged, label }
    }

    #[test]
    fn unary_potential_hand_example() {
        // theta1[y,0]=0.5, theta2[0]=[1,-1], x=[2,3], theta3[0]=[0.2], x*=[5]
        let mut p = ModelParams::zeros(dims());
        p.set_theta1(1, 0, 0.5);
        p.set_theta2(0, 0, 1.0);
        p.set_theta2(0, 1, -1.0);
        p.set_theta3(0, 0, 0.2);
        let v = p.unary_potential(1, 0, &[2.0, 3.0], Some(&[5.0])).unwrap();
        assert_abs_diff_eq!(v, 0.5 + (2.0 - 3.0) + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn unary_potential_zero_params_and_dropped_privileged() {
        let p = ModelParams::zeros(dims());
        assert_eq!(p.unary_potential(0, 2, &[4.0, -7.0], Some(&[3.0])).unwrap(), 0.0);

        let mut q = ModelParams::zeros(dims());
        q.set_theta3(1, 0, 123.0);
        // privileged term dropped when the frame is absent
        assert_eq!(q.unary_potential(0, 1, &[1.0, 1.0], None).unwrap(), 0.0);
    }

    #[test]
    fn unary_potential_dimension_mismatch() {
        let p = ModelParams::zeros(dims());
        assert!(matches!(
            p.unary_potential(0, 0, &[1.0], None),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            p.unary_potential(0, 0, &[1.0, 2.0], Some(&[1.0, 2.0])),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(p.unary_potential(5, 0, &[1.0, 2.0], None), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pairwise_potential_lookup() {
        let mut p = ModelParams::zeros(dims());
        p.set_omega(1, 0, 2, -0.7);
        assert_eq!(p.pairwise_potential(1, 0, 2).unwrap(), -0.7);
        assert_eq!(p.pairwise_potential(0, 1, 1).unwrap(), 0.0);

        let mut ident = ModelParams::zeros(dims());
        for y in 0..2 {
            for a in 0..3 {
                ident.set_omega(y, a, a, 1.0);
            }
        }
        assert_eq!(ident.pairwise_potential(1, 2, 2).unwrap(), 1.0);
        assert!(matches!(p.pairwise_potential(0, 0, 9), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn energy_single_frame_reduces_to_unary() {
        let mut p = ModelParams::zeros(dims());
        p.set_theta1(1, 0, 0.5);
        p.set_theta2(0, 0, 1.0);
        p.set_theta2(0, 1, -1.0);
        p.set_theta3(0, 0, 0.2);
        let s = sample(vec![vec![2.0, 3.0]], Some(vec![vec![5.0]]), 1);
        assert_abs_diff_eq!(p.energy(1, &[0], &s, true).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn energy_zero_params_and_length_mismatch() {
        let p = ModelParams::zeros(dims());
        let s = sample(vec![vec![1.0, 2.0], vec![3.0, 4.0]], None, 0);
        assert_eq!(p.energy(0, &[0, 1], &s, false).unwrap(), 0.0);
        assert!(matches!(p.energy(0, &[0], &s, false), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn energy_matches_term_by_term_resummation() {
        // T=3, |H|=2 seeded random params vs an independent loop
        let d = FeatureDims::new(2, 1, 2, 2).unwrap();
        let p = ModelParams::init(d, 42, 0.8);
        let s = sample(
            vec![vec![0.3, -1.2], vec![2.0, 0.1], vec![-0.5, 0.9]],
            Some(vec![vec![1.0], vec![-2.0], vec![0.25]]),
            1,
        );
        let path = [1usize, 0, 1];
        let mut expected = 0.0;
        for j in 0..3 {
            expected += p.theta1(1, path[j]);
            for k in 0..2 {
                expected += p.theta2_row(path[j])[k] * s.frames[j][k];
            }
            expected += p.theta3_row(path[j])[0] * s.privileged.as_ref().unwrap()[j][0];
        }
        for j in 0..2 {
            expected += p.omega(1, path[j], path[j + 1]);
        }
        assert_abs_diff_eq!(p.energy(1, &path, &s, true).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn energy_equals_dot_of_weights_and_path_features() {
        let d = FeatureDims::new(3, 2, 2, 3).unwrap();
        let p = ModelParams::init(d, 7, 0.5);
        let s = sample(
            vec![vec![1.0, -0.5, 2.0], vec![0.0, 0.25, -1.0]],
            Some(vec![vec![0.5, 0.5], vec![-1.5, 2.0]]),
            0,
        );
        for use_priv in [true, false] {
            let f = path_features(&s, 0, &[2, 1], &d, use_priv).unwrap();
            let w = p.to_vec();
            let dot: f64 = w.iter().zip(&f).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(p.energy(0, &[2, 1], &s, use_priv).unwrap(), dot, epsilon = 1e-12);
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let d = FeatureDims::new(4, 2, 2, 3).unwrap();
        assert_eq!(d.param_len(), 2 * 3 + 3 * 4 + 3 * 2 + 2 * 9);
        let p = ModelParams::init(d, 99, 1.5);
        let v = p.to_vec();
        assert_eq!(v.len(), 42);
        let q = ModelParams::from_vec(&v, d).unwrap();
        assert_eq!(p, q);

        let zeros = ModelParams::from_vec(&vec![0.0; 42], d).unwrap();
        assert_eq!(zeros, ModelParams::zeros(d));

        assert!(matches!(ModelParams::from_vec(&vec![0.0; 41], d), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let d = dims();
        assert_eq!(ModelParams::init(d, 5, 0.1), ModelParams::init(d, 5, 0.1));
        assert_ne!(ModelParams::init(d, 1, 0.1), ModelParams::init(d, 2, 0.1));
        assert_eq!(ModelParams::init(d, 5, 0.0), ModelParams::zeros(d));
    }

    #[test]
    fn sample_validation() {
        let d = dims();
        let good = sample(vec![vec![1.0, 2.0]], Some(vec![vec![0.5]]), 1);
        good.validate(&d).unwrap();

        let bad_label = sample(vec![vec![1.0, 2.0]], None, 7);
        assert!(bad_label.validate(&d).is_err());

        let bad_width = sample(vec![vec![1.0]], None, 0);
        assert!(bad_width.validate(&d).is_err());

        let nonfinite = sample(vec![vec![1.0, f64::NAN]], None, 0);
        assert!(matches!(nonfinite.validate(&d), Err(Error::Schema(_))));

        let ragged_priv = sample(vec![vec![1.0, 2.0], vec![3.0, 4.0]], Some(vec![vec![0.5]]), 0);
        assert!(ragged_priv.validate(&d).is_err());
    }
}
