//! Versioned text persistence of trained models.
//!
//! Bundles are pretty-printed JSON. Floats go through the shortest
//! round-trip decimal encoding, so save/load is bit-exact; the format
//! version is checked before anything else is parsed.

use super::NormStats;
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::model::{FeatureDims, ModelParams};
use crate::robust::{PrivCodebook, StudentTParams};
use crate::train::TrainReport;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Variant name as given on the command line (e.g. "ml-hcrf+").
    pub variant: String,
    pub seed: u64,
    /// JSON echo of the full training configuration.
    pub config_echo: String,
    pub report: TrainReport,
    /// Wall-clock save time; the only field allowed to differ between
    /// reruns with identical inputs.
    pub timestamp_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub dims: FeatureDims,
    pub params: ModelParams,
    pub t_params: Option<StudentTParams>,
    pub codebook: Option<PrivCodebook>,
    pub fusion: Option<FusionModel>,
    pub norm: NormStats,
    pub meta: TrainingMeta,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::schema(format!(
                "bundle format_version {} but this build reads {}",
                self.format_version, BUNDLE_FORMAT_VERSION
            )));
        }
        self.dims.validate()?;
        self.params.validate()?;
        if *self.params.dims() != self.dims {
            return Err(Error::schema("bundle dims disagree with parameter dims"));
        }
        if let Some(t) = &self.t_params {
            t.validate()?;
            if t.dim() != self.dims.m_xstar + self.dims.m_x {
                return Err(Error::schema("joint t dimension disagrees with dims"));
            }
        }
        if let Some(cb) = &self.codebook {
            cb.validate()?;
            if cb.codewords[0].len() != self.dims.m_xstar {
                return Err(Error::schema("codebook width disagrees with m_xstar"));
            }
        }
        if let Some(f) = &self.fusion {
            f.validate()?;
        }
        self.norm.validate()?;
        if self.norm.x_mean.len() != self.dims.m_x {
            return Err(Error::schema("normalization stats disagree with dims"));
        }
        Ok(())
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    let json = serde_json::to_string_pretty(bundle)
        .map_err(|e| Error::schema(format!("serialize bundle: {e}")))?;
    std::fs::write(path.as_ref(), json + "\n")?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::schema(format!("{}: {e}", path.as_ref().display())))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::schema("bundle has no format_version field"))?;
    if version != BUNDLE_FORMAT_VERSION as u64 {
        return Err(Error::schema(format!(
            "bundle format_version {version} but this build reads {BUNDLE_FORMAT_VERSION}"
        )));
    }
    let bundle: ModelBundle = serde_json::from_value(value)
        .map_err(|e| Error::schema(format!("{}: {e}", path.as_ref().display())))?;
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference;
    use crate::model::SequenceSample;
    use tempfile::tempdir;

    fn toy_bundle() -> ModelBundle {
        let dims = FeatureDims::new(2, 1, 2, 3).unwrap();
        ModelBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            dims,
            params: ModelParams::init(dims, 9, 0.37),
            t_params: Some(StudentTParams {
                mu: vec![0.1, -0.2, 0.3],
                sigma: vec![1.0, 0.1, 0.0, 0.1, 1.2, 0.05, 0.0, 0.05, 0.9],
                nu: 4.25,
            }),
            codebook: Some(PrivCodebook { codewords: vec![vec![0.5], vec![-1.5]] }),
            fusion: None,
            norm: NormStats {
                x_mean: vec![0.0, 1.0],
                x_std: vec![1.0, 2.0],
                xs_mean: vec![0.5],
                xs_std: vec![1.5],
            },
            meta: TrainingMeta {
                variant: "ml-hcrf+".into(),
                seed: 7,
                config_echo: "{}".into(),
                report: TrainReport {
                    objective_trace: vec![3.0, 2.5, 2.25],
                    iterations: 3,
                    final_grad_norm: 1e-6,
                    converged: true,
                },
                timestamp_unix: 123,
            },
        }
    }

    #[test]
    fn round_trip_preserves_posteriors_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bundle.json");
        let bundle = toy_bundle();
        save_bundle(&bundle, &path).unwrap();
        let loaded = load_bundle(&path).unwrap();
        assert_eq!(bundle, loaded);

        let probe = SequenceSample {
            id: "p".into(),
            frames: vec![vec![0.3, -0.7], vec![1.1, 0.2]],
            privileged: Some(vec![vec![0.4], vec![-0.1]]),
            label: 0,
        };
        let a = inference::posterior(&probe, &bundle.params, true).unwrap();
        let b = inference::posterior(&probe, &loaded.params, true).unwrap();
        for y in 0..2 {
            assert!((a.log_prob(y) - b.log_prob(y)).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_file_is_schema_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bundle.json");
        save_bundle(&toy_bundle(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_bundle(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bundle.json");
        save_bundle(&toy_bundle(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
        match load_bundle(&path) {
            Err(Error::Schema(msg)) => {
                assert!(msg.contains("99") && msg.contains('1'), "{msg}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
