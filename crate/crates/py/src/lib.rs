//! Python bindings: the main types (datasets, trained bundles, raw model
//! parameters) and operations (synthesis, training, inference,
//! evaluation, gradient checking) behind a small `hcrfplus_py` module.

use hcrfplus::data::{self, DataFormat, Dataset, ModelBundle, SynthSpec};
use hcrfplus::error::Error;
use hcrfplus::harness::{self, FusionOptions, PredictModeSpec, TrainOptions, Variant};
use hcrfplus::inference;
use hcrfplus::model::{FeatureDims, ModelParams, SequenceSample};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py_err(err: Error) -> PyErr {
    match &err {
        Error::Io(_) => PyIOError::new_err(err.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn parse_mode(mode: &str, mc_samples: usize) -> PyResult<PredictModeSpec> {
    match mode {
        "auto" => Ok(PredictModeSpec::Auto),
        "codebook" => Ok(PredictModeSpec::Codebook),
        "montecarlo" => Ok(PredictModeSpec::MonteCarlo { samples: mc_samples }),
        "regular-only" => Ok(PredictModeSpec::RegularOnly),
        other => Err(PyValueError::new_err(format!("unknown prediction mode '{other}'"))),
    }
}

/// A labeled collection of sequences.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Build a dataset from parallel lists of frames, optional privileged
    /// frames and labels.
    #[new]
    #[pyo3(signature = (frames, labels, privileged=None, ids=None))]
    fn new(
        frames: Vec<Vec<Vec<f64>>>,
        labels: Vec<usize>,
        privileged: Option<Vec<Option<Vec<Vec<f64>>>>>,
        ids: Option<Vec<String>>,
    ) -> PyResult<Self> {
        if frames.len() != labels.len() {
            return Err(PyValueError::new_err("frames and labels lengths differ"));
        }
        let n = frames.len();
        if n == 0 {
            return Err(PyValueError::new_err("empty dataset"));
        }
        let m_x = frames[0].first().map(|f| f.len()).unwrap_or(0);
        let mut m_xstar = 0;
        if let Some(p) = &privileged {
            if p.len() != n {
                return Err(PyValueError::new_err("privileged list length differs"));
            }
            m_xstar = p
                .iter()
                .flatten()
                .next()
                .and_then(|seq| seq.first())
                .map(|f| f.len())
                .unwrap_or(0);
        }
        let n_labels = labels.iter().copied().max().unwrap_or(0) + 1;
        let samples: Vec<SequenceSample> = (0..n)
            .map(|i| SequenceSample {
                id: ids
                    .as_ref()
                    .map(|v| v[i].clone())
                    .unwrap_or_else(|| format!("py-{i:04}")),
                frames: frames[i].clone(),
                privileged: privileged.as_ref().and_then(|p| p[i].clone()),
                label: labels[i],
            })
            .collect();
        let dims = FeatureDims { m_x, m_xstar, n_labels, n_hidden: 1 };
        let inner = Dataset::new(samples, dims, None).map_err(to_py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, format="jsonl"))]
    fn load(path: &str, format: &str) -> PyResult<Self> {
        let format: DataFormat = format.parse().map_err(to_py_err)?;
        let inner = data::load_dataset(path, format).map_err(to_py_err)?;
        Ok(PyDataset { inner })
    }

    #[pyo3(signature = (path, format="jsonl"))]
    fn save(&self, path: &str, format: &str) -> PyResult<()> {
        let format: DataFormat = format.parse().map_err(to_py_err)?;
        data::save_dataset(&self.inner, path, format).map_err(to_py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(m_x, m_xstar, n_labels)` of the data.
    fn dims(&self) -> (usize, usize, usize) {
        (self.inner.dims.m_x, self.inner.dims.m_xstar, self.inner.dims.n_labels)
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.samples.iter().map(|s| s.label).collect()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Drop the privileged channel from every sample.
    fn without_privileged(&self) -> PyDataset {
        let samples = self
            .inner
            .samples
            .iter()
            .map(|s| SequenceSample {
                id: s.id.clone(),
                frames: s.frames.clone(),
                privileged: None,
                label: s.label,
            })
            .collect();
        PyDataset {
            inner: Dataset {
                samples,
                dims: FeatureDims { m_xstar: 0, ..self.inner.dims },
                label_names: self.inner.label_names.clone(),
            },
        }
    }
}

/// Raw model weights with the documented flattening order.
#[pyclass(name = "ModelParams", skip_from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (m_x, m_xstar, n_labels, n_hidden, seed=0, scale=0.0))]
    fn new(
        m_x: usize,
        m_xstar: usize,
        n_labels: usize,
        n_hidden: usize,
        seed: u64,
        scale: f64,
    ) -> PyResult<Self> {
        let dims = FeatureDims::new(m_x, m_xstar, n_labels, n_hidden).map_err(to_py_err)?;
        Ok(PyModelParams { inner: ModelParams::init(dims, seed, scale) })
    }

    fn to_vec(&self) -> Vec<f64> {
        self.inner.to_vec()
    }

    #[staticmethod]
    fn from_vec(
        weights: Vec<f64>,
        m_x: usize,
        m_xstar: usize,
        n_labels: usize,
        n_hidden: usize,
    ) -> PyResult<Self> {
        let dims = FeatureDims::new(m_x, m_xstar, n_labels, n_hidden).map_err(to_py_err)?;
        Ok(PyModelParams { inner: ModelParams::from_vec(&weights, dims).map_err(to_py_err)? })
    }

    /// Energy of a fixed (label, hidden path) configuration.
    #[pyo3(signature = (label, hidden_path, frames, privileged=None))]
    fn energy(
        &self,
        label: usize,
        hidden_path: Vec<usize>,
        frames: Vec<Vec<f64>>,
        privileged: Option<Vec<Vec<f64>>>,
    ) -> PyResult<f64> {
        let sample = SequenceSample {
            id: "py".into(),
            frames,
            privileged,
            label,
        };
        self.inner.energy(label, &hidden_path, &sample, true).map_err(to_py_err)
    }

    /// Per-class log posterior of one sequence.
    #[pyo3(signature = (frames, privileged=None))]
    fn posterior(
        &self,
        frames: Vec<Vec<f64>>,
        privileged: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Vec<f64>> {
        let use_priv = privileged.is_some();
        let sample = SequenceSample { id: "py".into(), frames, privileged, label: 0 };
        let post = inference::posterior(&sample, &self.inner, use_priv).map_err(to_py_err)?;
        Ok(post.log_probs().to_vec())
    }

    /// Viterbi energy and one argmax hidden path for a label.
    #[pyo3(signature = (label, frames, privileged=None))]
    fn map_energy(
        &self,
        label: usize,
        frames: Vec<Vec<f64>>,
        privileged: Option<Vec<Vec<f64>>>,
    ) -> PyResult<(f64, Vec<usize>)> {
        let use_priv = privileged.is_some();
        let sample = SequenceSample { id: "py".into(), frames, privileged, label };
        inference::map_energy(label, &sample, &self.inner, use_priv).map_err(to_py_err)
    }
}

/// A trained model: weights plus the artifacts prediction needs.
#[pyclass(name = "Bundle")]
struct PyBundle {
    inner: ModelBundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyBundle { inner: data::load_bundle(path).map_err(to_py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        data::save_bundle(&self.inner, path).map_err(to_py_err)
    }

    fn variant(&self) -> String {
        self.inner.meta.variant.clone()
    }

    fn weights(&self) -> PyModelParams {
        PyModelParams { inner: self.inner.params.clone() }
    }

    fn objective_trace(&self) -> Vec<f64> {
        self.inner.meta.report.objective_trace.clone()
    }

    /// Predict every sample: list of (id, label, log_posterior).
    #[pyo3(signature = (dataset, mode="auto", mc_samples=100, seed=0))]
    fn predict(
        &self,
        dataset: &PyDataset,
        mode: &str,
        mc_samples: usize,
        seed: u64,
    ) -> PyResult<Vec<(String, usize, Vec<f64>)>> {
        let mode = parse_mode(mode, mc_samples)?;
        let rows = harness::predict_dataset(&self.inner, &dataset.inner, &mode, seed)
            .map_err(to_py_err)?;
        Ok(rows.into_iter().map(|r| (r.id, r.predicted, r.log_posterior)).collect())
    }

    /// Accuracy, per-class recall and confusion counts as a dict.
    #[pyo3(signature = (dataset, mode="auto", mc_samples=100, seed=0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        mode: &str,
        mc_samples: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mode = parse_mode(mode, mc_samples)?;
        let report =
            harness::evaluate(&self.inner, &dataset.inner, &mode, seed).map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item("accuracy", report.accuracy)?;
        out.set_item("n", report.n)?;
        out.set_item("per_class_recall", report.per_class_recall)?;
        out.set_item("supports", report.supports)?;
        out.set_item("confusion", report.confusion)?;
        Ok(out)
    }
}

/// Generate a synthetic privileged-information dataset.
#[pyfunction]
#[pyo3(signature = (n_labels=4, n_hidden_true=5, t_min=10, t_max=20, m_x=6, m_xstar=5,
                    per_class=80, noise=1.0, rho=0.9, outlier_frac=0.0, outlier_scale=20.0,
                    seed=0))]
#[allow(clippy::too_many_arguments)]
fn synth(
    n_labels: usize,
    n_hidden_true: usize,
    t_min: usize,
    t_max: usize,
    m_x: usize,
    m_xstar: usize,
    per_class: usize,
    noise: f64,
    rho: f64,
    outlier_frac: f64,
    outlier_scale: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let spec = SynthSpec {
        n_labels,
        n_hidden_true,
        t_min,
        t_max,
        m_x,
        m_xstar,
        per_class,
        noise,
        rho,
        outlier_frac,
        outlier_scale,
        seed,
    };
    Ok(PyDataset { inner: data::synth_generate(&spec).map_err(to_py_err)? })
}

/// Train a bundle on a dataset.
#[pyfunction]
#[pyo3(signature = (dataset, variant="ml-hcrf+", n_hidden=5, sigma=1.0, max_iters=400,
                    grad_tol=1e-5, codebook_k=256, seed=0, nu_fixed=None, fusion=false))]
#[allow(clippy::too_many_arguments)]
fn train(
    dataset: &PyDataset,
    variant: &str,
    n_hidden: usize,
    sigma: f64,
    max_iters: usize,
    grad_tol: f64,
    codebook_k: usize,
    seed: u64,
    nu_fixed: Option<f64>,
    fusion: bool,
) -> PyResult<PyBundle> {
    let variant: Variant = variant.parse().map_err(to_py_err)?;
    let opts = TrainOptions {
        variant,
        n_hidden,
        sigma,
        max_iters,
        grad_tol,
        codebook_k,
        seed,
        nu_fixed,
        fusion: if fusion { Some(FusionOptions::default()) } else { None },
        ..Default::default()
    };
    Ok(PyBundle { inner: harness::train_bundle(&dataset.inner, &opts).map_err(to_py_err)? })
}

/// Audit the analytic gradients against finite differences.
#[pyfunction]
#[pyo3(signature = (instances=20, seed=0))]
fn gradcheck<'py>(py: Python<'py>, instances: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let report = harness::gradcheck(instances, seed, false).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("instances", report.instances)?;
    out.set_item("ml_fixed_max_err", report.ml_fixed_max_err)?;
    out.set_item("ml_adaptive_max_err", report.ml_adaptive_max_err)?;
    out.set_item("mm_directional_max_err", report.mm_directional_max_err)?;
    out.set_item("threshold", report.threshold)?;
    out.set_item("passed", report.passed())?;
    Ok(out)
}

#[pymodule]
fn hcrfplus_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
