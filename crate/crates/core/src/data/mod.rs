//! Dataset loading and saving, feature normalization, the synthetic
//! generator, and model-bundle persistence.

mod bundle;
mod io;
mod synth;

pub use bundle::{load_bundle, save_bundle, ModelBundle, TrainingMeta, BUNDLE_FORMAT_VERSION};
pub use io::{load_dataset, save_dataset, save_dataset_with_header, DataFormat};
pub use synth::{synth_generate, synth_generate_with_states, SynthSpec};

use crate::error::{Error, Result};
use crate::model::{FeatureDims, SequenceSample};
use serde::{Deserialize, Serialize};

/// A labeled collection of sequences plus its dimensions.
///
/// Loaders always set `dims.n_hidden = 1`; the number of hidden states is
/// a model choice, not a property of the data, and is overridden at
/// training time.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SequenceSample>,
    pub dims: FeatureDims,
    pub label_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        samples: Vec<SequenceSample>,
        dims: FeatureDims,
        label_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let ds = Dataset { samples, dims, label_names };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// True when every sample carries a privileged channel.
    pub fn fully_privileged(&self) -> bool {
        self.dims.m_xstar > 0 && self.samples.iter().all(|s| s.has_privileged())
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("dataset holds no samples"));
        }
        self.dims.validate()?;
        for s in &self.samples {
            s.validate(&self.dims)?;
        }
        if let Some(names) = &self.label_names {
            if names.len() != self.dims.n_labels {
                return Err(Error::invalid("label_names length does not match n_labels"));
            }
        }
        Ok(())
    }

    /// Number of samples per label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.dims.n_labels];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Per-dimension z-scoring statistics for the regular and privileged
/// channels. Standard deviations are floored at 1e-8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub xs_mean: Vec<f64>,
    pub xs_std: Vec<f64>,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        if self.x_mean.len() != self.x_std.len() || self.xs_mean.len() != self.xs_std.len() {
            return Err(Error::invalid("normalization stats are ragged"));
        }
        if self.x_std.iter().chain(&self.xs_std).any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("normalization stddev must be positive"));
        }
        let all = self.x_mean.iter().chain(&self.x_std).chain(&self.xs_mean).chain(&self.xs_std);
        for v in all {
            if !v.is_finite() {
                return Err(Error::numerical("non-finite normalization stats"));
            }
        }
        Ok(())
    }
}

const STD_FLOOR: f64 = 1e-8;

fn moments(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt().max(STD_FLOOR))
}

/// Population mean and (floored) standard deviation per feature
/// dimension, pooled over every frame in the dataset.
pub fn normalize_fit(dataset: &Dataset) -> NormStats {
    let m_x = dataset.dims.m_x;
    let m_xs = dataset.dims.m_xstar;
    let mut x_mean = vec![0.0; m_x];
    let mut x_std = vec![1.0; m_x];
    let n_frames: usize = dataset.samples.iter().map(|s| s.len()).sum();
    for d in 0..m_x {
        let it = dataset.samples.iter().flat_map(move |s| s.frames.iter().map(move |f| f[d]));
        let (m, s) = moments(it, n_frames);
        x_mean[d] = m;
        x_std[d] = s;
    }
    let mut xs_mean = vec![0.0; m_xs];
    let mut xs_std = vec![1.0; m_xs];
    if m_xs > 0 {
        let n_priv: usize = dataset
            .samples
            .iter()
            .filter_map(|s| s.privileged.as_ref().map(|p| p.len()))
            .sum();
        if n_priv > 0 {
            for d in 0..m_xs {
                let it = dataset
                    .samples
                    .iter()
                    .filter_map(move |s| s.privileged.as_ref())
                    .flat_map(move |p| p.iter().map(move |f| f[d]));
                let (m, s) = moments(it, n_priv);
                xs_mean[d] = m;
                xs_std[d] = s;
            }
        }
    }
    NormStats { x_mean, x_std, xs_mean, xs_std }
}

/// Z-score every frame with the given statistics.
pub fn normalize_apply(dataset: &Dataset, stats: &NormStats) -> Result<Dataset> {
    stats.validate()?;
    if stats.x_mean.len() != dataset.dims.m_x {
        return Err(Error::invalid(format!(
            "stats cover {} regular dims, dataset has {}",
            stats.x_mean.len(),
            dataset.dims.m_x
        )));
    }
    if dataset.dims.m_xstar > 0 && stats.xs_mean.len() != dataset.dims.m_xstar {
        return Err(Error::invalid(format!(
            "stats cover {} privileged dims, dataset has {}",
            stats.xs_mean.len(),
            dataset.dims.m_xstar
        )));
    }
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let frames = s
                .frames
                .iter()
                .map(|f| {
                    f.iter()
                        .enumerate()
                        .map(|(d, v)| (v - stats.x_mean[d]) / stats.x_std[d])
                        .collect()
                })
                .collect();
            let privileged = s.privileged.as_ref().map(|p| {
                p.iter()
                    .map(|f| {
                        f.iter()
                            .enumerate()
                            .map(|(d, v)| (v - stats.xs_mean[d]) / stats.xs_std[d])
                            .collect()
                    })
                    .collect()
            });
            SequenceSample { id: s.id.clone(), frames, privileged, label: s.label }
        })
        .collect();
    Dataset::new(samples, dataset.dims, dataset.label_names.clone())
}
