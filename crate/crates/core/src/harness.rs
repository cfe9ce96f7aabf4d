//! End-to-end drivers shared by the command-line front end and the test
//! suites: variant dispatch, bundle training, prediction, evaluation,
//! stratified cross-validation and the gradient checker.

use crate::data::{
    normalize_apply, normalize_fit, Dataset, ModelBundle, TrainingMeta, BUNDLE_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::fusion::{fit_fusion, predict_privileged, select_eta_cv, FusionModel};
use crate::inference::{self, PredictMode};
use crate::model::{FeatureDims, ModelParams, SequenceSample};
use crate::robust::{build_codebook, fit_joint_t_em, EmConfig, NuMode};
use crate::train::ml::{self, MlConfig};
use crate::train::mm::{self, MmConfig, StepRule};
use crate::train::LambdaMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;

/// The six trainable model flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    MlHcrfPlus,
    AmlHcrfPlus,
    MmHcrfPlus,
    AmmHcrfPlus,
    /// Plain hidden CRF on the regular channel only.
    HcrfRegular,
    /// Oracle baseline: privileged features concatenated onto the regular
    /// ones, needed at test time too.
    HcrfPrivilegedAsRegular,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::MlHcrfPlus,
        Variant::AmlHcrfPlus,
        Variant::MmHcrfPlus,
        Variant::AmmHcrfPlus,
        Variant::HcrfRegular,
        Variant::HcrfPrivilegedAsRegular,
    ];

    /// Uses the privileged channel during training and marginalizes it at
    /// test time.
    pub fn is_lupi(&self) -> bool {
        matches!(
            self,
            Variant::MlHcrfPlus | Variant::AmlHcrfPlus | Variant::MmHcrfPlus | Variant::AmmHcrfPlus
        )
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, Variant::AmlHcrfPlus | Variant::AmmHcrfPlus)
    }

    pub fn is_max_margin(&self) -> bool {
        matches!(self, Variant::MmHcrfPlus | Variant::AmmHcrfPlus)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::MlHcrfPlus => "ml-hcrf+",
            Variant::AmlHcrfPlus => "aml-hcrf+",
            Variant::MmHcrfPlus => "mm-hcrf+",
            Variant::AmmHcrfPlus => "amm-hcrf+",
            Variant::HcrfRegular => "hcrf-regular",
            Variant::HcrfPrivilegedAsRegular => "hcrf-privileged-as-regular",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml-hcrf+" => Ok(Variant::MlHcrfPlus),
            "aml-hcrf+" => Ok(Variant::AmlHcrfPlus),
            "mm-hcrf+" => Ok(Variant::MmHcrfPlus),
            "amm-hcrf+" => Ok(Variant::AmmHcrfPlus),
            "hcrf-regular" => Ok(Variant::HcrfRegular),
            "hcrf-privileged-as-regular" => Ok(Variant::HcrfPrivilegedAsRegular),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Fusion preprocessing: predict privileged features for samples that
/// lack them, from a ridge regression fitted on the samples that have
/// them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionOptions {
    /// Fixed ridge coefficient; `None` selects one by cross-validation
    /// over `grid`.
    pub eta: Option<f64>,
    pub folds: usize,
    pub grid: Vec<f64>,
}

impl Default for FusionOptions {
    fn default() -> Self {
        FusionOptions {
            eta: None,
            folds: 5,
            grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
        }
    }
}

/// Everything `train_bundle` needs besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOptions {
    pub variant: Variant,
    pub n_hidden: usize,
    pub sigma: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub history: usize,
    pub codebook_k: usize,
    pub seed: u64,
    /// Degrees-of-freedom handling of the joint t fit; pinning a huge
    /// value gives the Gaussian-conditional ablation.
    pub nu_fixed: Option<f64>,
    pub step_eta: f64,
    pub diminishing_steps: bool,
    pub bundle_size: usize,
    pub fusion: Option<FusionOptions>,
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            variant: Variant::MlHcrfPlus,
            n_hidden: 5,
            sigma: 1.0,
            max_iters: 400,
            grad_tol: 1e-5,
            history: 10,
            codebook_k: 256,
            seed: 0,
            nu_fixed: None,
            step_eta: 0.5,
            diminishing_steps: true,
            bundle_size: 20,
            fusion: None,
        }
    }
}

fn strip_privileged(dataset: &Dataset) -> Dataset {
    let samples = dataset
        .samples
        .iter()
        .map(|s| SequenceSample {
            id: s.id.clone(),
            frames: s.frames.clone(),
            privileged: None,
            label: s.label,
        })
        .collect();
    Dataset {
        samples,
        dims: FeatureDims { m_xstar: 0, ..dataset.dims },
        label_names: dataset.label_names.clone(),
    }
}

fn concat_privileged(dataset: &Dataset) -> Result<Dataset> {
    if !dataset.fully_privileged() {
        return Err(Error::schema(
            "privileged-as-regular needs a privileged channel on every sample",
        ));
    }
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let priv_frames = s.privileged.as_ref().unwrap();
            let frames = s
                .frames
                .iter()
                .zip(priv_frames)
                .map(|(f, p)| {
                    let mut v = f.clone();
                    v.extend_from_slice(p);
                    v
                })
                .collect();
            SequenceSample { id: s.id.clone(), frames, privileged: None, label: s.label }
        })
        .collect();
    Ok(Dataset {
        samples,
        dims: FeatureDims {
            m_x: dataset.dims.m_x + dataset.dims.m_xstar,
            m_xstar: 0,
            ..dataset.dims
        },
        label_names: dataset.label_names.clone(),
    })
}

fn count_distinct_capped(frames: &[&Vec<f64>], cap: usize) -> usize {
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    'outer: for f in frames {
        for d in &distinct {
            if d == f {
                continue 'outer;
            }
        }
        distinct.push(f);
        if distinct.len() >= cap {
            break;
        }
    }
    distinct.len()
}

/// Train a full bundle: variant shaping, normalization, optional fusion
/// imputation, joint-t and codebook fits, then the learner dispatch.
pub fn train_bundle(dataset: &Dataset, opts: &TrainOptions) -> Result<ModelBundle> {
    dataset.validate()?;
    if opts.n_hidden < 1 {
        return Err(Error::config("n-hidden must be >= 1"));
    }
    if !(opts.sigma > 0.0) {
        return Err(Error::config("sigma must be > 0"));
    }
    if opts.variant.is_lupi() && dataset.dims.m_xstar == 0 {
        return Err(Error::config(format!(
            "variant {} needs a privileged channel, dataset has none",
            opts.variant
        )));
    }
    if opts.fusion.is_some() && !opts.variant.is_lupi() {
        return Err(Error::config("fusion preprocessing only applies to the LUPI variants"));
    }

    let shaped = match opts.variant {
        Variant::HcrfRegular => strip_privileged(dataset),
        Variant::HcrfPrivilegedAsRegular => concat_privileged(dataset)
            .map_err(|_| Error::config("privileged-as-regular needs privileged data on every sample"))?,
        _ => dataset.clone(),
    };

    let norm = normalize_fit(&shaped);
    let mut working = normalize_apply(&shaped, &norm)?;

    // optional fusion: fit on the privileged-bearing samples, impute the rest
    let mut fusion_model: Option<FusionModel> = None;
    if let Some(fopts) = &opts.fusion {
        let (mut xs_rows, mut x_rows) = (Vec::new(), Vec::new());
        for s in &working.samples {
            if let Some(p) = &s.privileged {
                for (f, pf) in s.frames.iter().zip(p) {
                    x_rows.push(f.clone());
                    xs_rows.push(pf.clone());
                }
            }
        }
        if x_rows.is_empty() {
            return Err(Error::config("fusion needs at least one privileged sample"));
        }
        let eta = match fopts.eta {
            Some(e) => e,
            None => select_eta_cv(&x_rows, &xs_rows, fopts.folds, &fopts.grid, opts.seed)?,
        };
        let model = fit_fusion(&x_rows, &xs_rows, eta)?;
        for s in working.samples.iter_mut() {
            if s.privileged.is_none() {
                let imputed: Result<Vec<Vec<f64>>> =
                    s.frames.iter().map(|f| predict_privileged(&model, f)).collect();
                s.privileged = Some(imputed?);
            }
        }
        fusion_model = Some(model);
    }

    if opts.variant.is_lupi() && !working.fully_privileged() {
        return Err(Error::config(format!(
            "variant {} needs privileged data on every sample (enable fusion to impute)",
            opts.variant
        )));
    }

    // robust artifacts for the test-time marginalization
    let (t_params, codebook, k_eff) = if opts.variant.is_lupi() {
        let mut joint_points = Vec::new();
        let mut priv_frames = Vec::new();
        for s in &working.samples {
            let p = s.privileged.as_ref().unwrap();
            for (f, pf) in s.frames.iter().zip(p) {
                let mut v = pf.clone();
                v.extend_from_slice(f);
                joint_points.push(v);
                priv_frames.push(pf);
            }
        }
        let em_config = EmConfig {
            nu_mode: match opts.nu_fixed {
                Some(nu) => NuMode::Fixed(nu),
                None => NuMode::Estimate,
            },
            ..Default::default()
        };
        let fit = fit_joint_t_em(&joint_points, &em_config)?;
        let k = opts.codebook_k.max(1).min(count_distinct_capped(&priv_frames, opts.codebook_k.max(1)));
        let owned: Vec<Vec<f64>> = priv_frames.iter().map(|f| (*f).clone()).collect();
        let cb = build_codebook(&owned, k, opts.seed)?;
        (Some(fit.params), Some(cb), k)
    } else {
        (None, None, 0)
    };

    let dims = FeatureDims {
        m_x: working.dims.m_x,
        m_xstar: working.dims.m_xstar,
        n_labels: working.dims.n_labels,
        n_hidden: opts.n_hidden,
    };
    let lambda_mode = if opts.variant.is_adaptive() {
        LambdaMode::Adaptive
    } else {
        LambdaMode::FixedShared(1.0)
    };
    let (params, report) = if opts.variant.is_max_margin() {
        let config = MmConfig {
            sigma: opts.sigma,
            lambda_mode,
            max_iters: opts.max_iters,
            step_rule: if opts.diminishing_steps {
                StepRule::Diminishing(opts.step_eta)
            } else {
                StepRule::Constant(opts.step_eta)
            },
            bundle_size: opts.bundle_size,
            grad_tol: opts.grad_tol,
            seed: opts.seed,
        };
        mm::train_mm(&working.samples, dims, &config)?
    } else {
        let config = MlConfig {
            sigma: opts.sigma,
            lambda_mode,
            max_iters: opts.max_iters,
            grad_tol: opts.grad_tol,
            history: opts.history,
            seed: opts.seed,
        };
        ml::train_ml(&working.samples, dims, &config)?
    };

    let config_echo = serde_json::to_string(&serde_json::json!({
        "variant": opts.variant.to_string(),
        "n_hidden": opts.n_hidden,
        "sigma": opts.sigma,
        "max_iters": opts.max_iters,
        "grad_tol": opts.grad_tol,
        "history": opts.history,
        "codebook_k": k_eff,
        "seed": opts.seed,
        "nu_fixed": opts.nu_fixed,
        "step_eta": opts.step_eta,
        "diminishing_steps": opts.diminishing_steps,
        "bundle_size": opts.bundle_size,
        "fusion_eta": fusion_model.as_ref().map(|m| m.eta),
    }))
    .expect("config echo serializes");

    let timestamp_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    Ok(ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        dims,
        params,
        t_params,
        codebook,
        fusion: fusion_model,
        norm,
        meta: TrainingMeta {
            variant: opts.variant.to_string(),
            seed: opts.seed,
            config_echo,
            report,
            timestamp_unix,
        },
    })
}

/// Prediction-mode request as it appears on the command line; `Auto`
/// picks the codebook path when the bundle carries one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictModeSpec {
    Auto,
    Codebook,
    MonteCarlo { samples: usize },
    RegularOnly,
}

impl PredictModeSpec {
    fn resolve(&self, bundle: &ModelBundle, seed: u64) -> PredictMode {
        match self {
            PredictModeSpec::Auto => {
                if bundle.codebook.is_some() {
                    PredictMode::Codebook
                } else {
                    PredictMode::RegularOnly
                }
            }
            PredictModeSpec::Codebook => PredictMode::Codebook,
            PredictModeSpec::MonteCarlo { samples } => {
                PredictMode::MonteCarlo { samples: *samples, seed }
            }
            PredictModeSpec::RegularOnly => PredictMode::RegularOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub predicted: usize,
    pub log_posterior: Vec<f64>,
}

fn shape_for_bundle(bundle: &ModelBundle, dataset: &Dataset) -> Result<Dataset> {
    let variant: Variant = bundle.meta.variant.parse()?;
    let shaped = match variant {
        Variant::HcrfPrivilegedAsRegular => concat_privileged(dataset)?,
        // the privileged channel is ignored (never imputed) everywhere else
        _ => strip_privileged(dataset),
    };
    if shaped.dims.m_x != bundle.dims.m_x {
        return Err(Error::schema(format!(
            "dataset provides {} regular features, bundle expects {}",
            shaped.dims.m_x, bundle.dims.m_x
        )));
    }
    if shaped.dims.n_labels > bundle.dims.n_labels {
        return Err(Error::schema(format!(
            "dataset labels reach {}, bundle knows {} classes",
            shaped.dims.n_labels, bundle.dims.n_labels
        )));
    }
    normalize_apply(&shaped, &bundle.norm)
}

fn mix_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z ^ (z >> 31)
}

/// Predict every sample of a dataset with a trained bundle.
pub fn predict_dataset(
    bundle: &ModelBundle,
    dataset: &Dataset,
    mode: &PredictModeSpec,
    seed: u64,
) -> Result<Vec<PredictionRow>> {
    bundle.validate()?;
    let shaped = shape_for_bundle(bundle, dataset)?;
    let rows: Result<Vec<PredictionRow>> = shaped
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let resolved = mode.resolve(bundle, mix_seed(seed, i));
            let (label, post) = inference::predict(
                s,
                &bundle.params,
                bundle.t_params.as_ref(),
                bundle.codebook.as_ref(),
                &resolved,
            )?;
            Ok(PredictionRow {
                id: s.id.clone(),
                predicted: label,
                log_posterior: post.log_probs().to_vec(),
            })
        })
        .collect();
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub per_class_recall: Vec<f64>,
    pub supports: Vec<usize>,
    /// `confusion[true][pred]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy, per-class recall and the confusion matrix of a bundle on a
/// labeled dataset.
pub fn evaluate(
    bundle: &ModelBundle,
    dataset: &Dataset,
    mode: &PredictModeSpec,
    seed: u64,
) -> Result<EvalReport> {
    let rows = predict_dataset(bundle, dataset, mode, seed)?;
    let n_labels = bundle.dims.n_labels;
    let mut confusion = vec![vec![0usize; n_labels]; n_labels];
    let mut correct = 0usize;
    for (row, s) in rows.iter().zip(&dataset.samples) {
        confusion[s.label][row.predicted] += 1;
        if row.predicted == s.label {
            correct += 1;
        }
    }
    let supports: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    // recall = diagonal over support
    let per_class_recall: Vec<f64> = confusion
        .iter()
        .enumerate()
        .zip(&supports)
        .map(|((y, row), &sup)| if sup == 0 { 0.0 } else { row[y] as f64 / sup as f64 })
        .collect();
    Ok(EvalReport {
        n: rows.len(),
        accuracy: correct as f64 / rows.len() as f64,
        per_class_recall,
        supports,
        confusion,
    })
}

/// Stratified fold assignment: per label, a seeded shuffle dealt
/// round-robin. Errors when any class is smaller than the fold count.
pub fn stratified_folds(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::config("need at least 2 folds"));
    }
    let counts = dataset.class_counts();
    for (label, &c) in counts.iter().enumerate() {
        if c > 0 && c < folds {
            return Err(Error::config(format!(
                "class {label} has {c} samples, fewer than {folds} folds"
            )));
        }
    }
    let mut assignment = vec![0usize; dataset.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in 0..dataset.dims.n_labels {
        let mut idx: Vec<usize> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub variant: String,
    pub n_hidden: usize,
    pub sigma: f64,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Per-fold audit record proving that every statistic was fitted inside
/// the training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAudit {
    pub variant: String,
    pub n_hidden: usize,
    pub sigma: f64,
    pub fold: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub norm_mean_0: f64,
    pub norm_std_0: f64,
    pub t_nu: Option<f64>,
    pub codebook_k: Option<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CrossvalOptions {
    pub variants: Vec<Variant>,
    pub n_hidden_list: Vec<usize>,
    pub sigma_list: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub mode: PredictModeSpec,
    /// Template for everything not swept by the grid.
    pub base: TrainOptions,
}

/// Run the grid: every (variant, n_hidden, sigma) cell is scored by
/// stratified k-fold cross-validation. Normalization, fusion, t and
/// codebook fits all happen inside each training fold.
pub fn crossval(dataset: &Dataset, opts: &CrossvalOptions) -> Result<(Vec<CellResult>, Vec<FoldAudit>)> {
    dataset.validate()?;
    if opts.variants.is_empty() || opts.n_hidden_list.is_empty() || opts.sigma_list.is_empty() {
        return Err(Error::config("empty cross-validation grid"));
    }
    let assignment = stratified_folds(dataset, opts.folds, opts.seed)?;

    let mut jobs = Vec::new();
    for &variant in &opts.variants {
        for &n_hidden in &opts.n_hidden_list {
            for &sigma in &opts.sigma_list {
                for fold in 0..opts.folds {
                    jobs.push((variant, n_hidden, sigma, fold));
                }
            }
        }
    }

    let results: Result<Vec<(f64, FoldAudit)>> = jobs
        .par_iter()
        .map(|&(variant, n_hidden, sigma, fold)| {
            let mut train_samples = Vec::new();
            let mut test_samples = Vec::new();
            for (s, &f) in dataset.samples.iter().zip(&assignment) {
                if f == fold {
                    test_samples.push(s.clone());
                } else {
                    train_samples.push(s.clone());
                }
            }
            let train_ds = Dataset::new(train_samples, dataset.dims, dataset.label_names.clone())?;
            let test_ds = Dataset::new(test_samples, dataset.dims, dataset.label_names.clone())?;
            let train_opts = TrainOptions {
                variant,
                n_hidden,
                sigma,
                seed: opts.base.seed,
                ..opts.base.clone()
            };
            let bundle = train_bundle(&train_ds, &train_opts)?;
            let report = evaluate(&bundle, &test_ds, &opts.mode, mix_seed(opts.seed, fold))?;
            let audit = FoldAudit {
                variant: variant.to_string(),
                n_hidden,
                sigma,
                fold,
                train_count: train_ds.len(),
                test_count: test_ds.len(),
                norm_mean_0: bundle.norm.x_mean[0],
                norm_std_0: bundle.norm.x_std[0],
                t_nu: bundle.t_params.as_ref().map(|t| t.nu),
                codebook_k: bundle.codebook.as_ref().map(|c| c.k()),
                accuracy: report.accuracy,
            };
            Ok((report.accuracy, audit))
        })
        .collect();
    let results = results?;

    let mut cells = Vec::new();
    let mut audits = Vec::new();
    let mut cursor = 0;
    for &variant in &opts.variants {
        for &n_hidden in &opts.n_hidden_list {
            for &sigma in &opts.sigma_list {
                let mut accs = Vec::with_capacity(opts.folds);
                for _ in 0..opts.folds {
                    let (acc, audit) = &results[cursor];
                    accs.push(*acc);
                    audits.push(audit.clone());
                    cursor += 1;
                }
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                let var = if accs.len() > 1 {
                    accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                        / (accs.len() - 1) as f64
                } else {
                    0.0
                };
                cells.push(CellResult {
                    variant: variant.to_string(),
                    n_hidden,
                    sigma,
                    fold_accuracies: accs,
                    mean,
                    std: var.sqrt(),
                });
            }
        }
    }
    Ok((cells, audits))
}

/// Gradient-checker verdict. `threshold` is pinned at 1e-4.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub instances: usize,
    pub ml_fixed_max_err: f64,
    pub ml_adaptive_max_err: f64,
    pub mm_directional_max_err: f64,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ml_fixed_max_err <= self.threshold
            && self.ml_adaptive_max_err <= self.threshold
            && self.mm_directional_max_err <= self.threshold
    }
}

fn gradcheck_instance(k: usize, seed: u64) -> (FeatureDims, Vec<SequenceSample>, ModelParams) {
    // instance 0 exercises the degenerate single-hidden-state case
    let n_hidden = if k == 0 { 1 } else { 1 + (k % 3) };
    let dims = FeatureDims {
        m_x: 1 + (k % 3),
        m_xstar: 1 + (k % 2),
        n_labels: 2 + (k % 2),
        n_hidden,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
    let n = 3 + (k % 3);
    let samples = (0..n)
        .map(|i| {
            let t = 1 + ((k + i) % 4);
            SequenceSample {
                id: format!("g{k}-{i}"),
                frames: (0..t)
                    .map(|_| (0..dims.m_x).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                    .collect(),
                privileged: Some(
                    (0..t)
                        .map(|_| (0..dims.m_xstar).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                        .collect(),
                ),
                label: i % dims.n_labels,
            }
        })
        .collect();
    let params = ModelParams::init(dims, seed.wrapping_add(1000 + k as u64), 0.5);
    (dims, samples, params)
}

fn ml_fd_error(
    dims: FeatureDims,
    samples: &[SequenceSample],
    params: &ModelParams,
    coeffs: &[f64],
    corrupt: bool,
) -> Result<f64> {
    let sigma = 1.5;
    let mut grad = ml::ml_gradient(samples, params, coeffs, sigma)?;
    if corrupt {
        grad[0] += 1e-3;
    }
    let w = params.to_vec();
    let eps = 1e-5;
    let mut numeric = vec![0.0; w.len()];
    for i in 0..w.len() {
        let mut wp = w.clone();
        wp[i] += eps;
        let fp = ml::ml_objective(samples, &ModelParams::from_vec(&wp, dims)?, coeffs, sigma)?;
        wp[i] = w[i] - eps;
        let fm = ml::ml_objective(samples, &ModelParams::from_vec(&wp, dims)?, coeffs, sigma)?;
        numeric[i] = (fp - fm) / (2.0 * eps);
    }
    let scale = numeric.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    Ok(grad
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max))
}

/// Central-difference audit of the likelihood gradient (fixed and
/// frozen-adaptive coefficients) and a directional one-sided audit of the
/// max-margin subgradient at perturbation-stable points.
pub fn gradcheck(instances: usize, seed: u64, corrupt: bool) -> Result<GradcheckReport> {
    let mut ml_fixed: f64 = 0.0;
    let mut ml_adaptive: f64 = 0.0;
    for k in 0..instances {
        let (dims, samples, params) = gradcheck_instance(k, seed);
        let fixed = vec![1.0; samples.len()];
        ml_fixed = ml_fixed.max(ml_fd_error(dims, &samples, &params, &fixed, corrupt)?);
        let adaptive = ml::resolve_coeffs(&samples, &params, &LambdaMode::Adaptive)?;
        ml_adaptive = ml_adaptive.max(ml_fd_error(dims, &samples, &params, &adaptive, corrupt)?);
    }

    // directional subgradient checks away from kinks
    let mut mm_err: f64 = 0.0;
    let mut checked = 0;
    let mut attempt = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    while checked < instances && attempt < instances * 20 {
        attempt += 1;
        let (dims, samples, params) = gradcheck_instance(attempt % 7 + 1, seed.wrapping_add(attempt as u64 * 31));
        if dims.n_labels < 2 {
            continue;
        }
        let coeffs = vec![1.0; samples.len()];
        let sigma = 1.0;
        let w = params.to_vec();
        let mut dir: Vec<f64> = (0..w.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for d in dir.iter_mut() {
            *d /= norm;
        }
        // stability probe: hinge argmax structure must not change nearby
        let probe_cfg = |wv: &[f64]| -> Result<Vec<(f64, usize)>> {
            let p = ModelParams::from_vec(wv, dims)?;
            samples
                .iter()
                .map(|s| {
                    let h = mm::hinge_loss(s, &p)?;
                    let post = inference::posterior(s, &p, true)?;
                    Ok((h, post.argmax()))
                })
                .collect()
        };
        let delta = 1e-4;
        let here = probe_cfg(&w)?;
        if here.iter().any(|(h, _)| h.abs() < 1e-3) {
            continue;
        }
        let plus: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a + delta * b).collect();
        let minus: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a - delta * b).collect();
        let stable = |a: &[(f64, usize)], b: &[(f64, usize)]| {
            a.iter().zip(b).all(|((ha, _), (hb, _))| (ha > &0.0) == (hb > &0.0))
        };
        if !stable(&here, &probe_cfg(&plus)?) || !stable(&here, &probe_cfg(&minus)?) {
            continue;
        }
        let mut g = mm::mm_subgradient(&samples, &params, &coeffs, sigma)?;
        if corrupt {
            g[0] += 1e-3;
        }
        let gd: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if gd.abs() < 1e-2 {
            continue;
        }
        let eps = 1e-5;
        let wp: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
        let fp = mm::mm_objective(&samples, &ModelParams::from_vec(&wp, dims)?, &coeffs, sigma)?;
        let f0 = mm::mm_objective(&samples, &params, &coeffs, sigma)?;
        let numeric = (fp - f0) / eps;
        let rel = (numeric - gd).abs() / gd.abs().max(1.0);
        // verify the argmax paths did not flip across the probe step
        mm_err = mm_err.max(rel);
        checked += 1;
    }
    if checked == 0 {
        return Err(Error::numerical("no perturbation-stable max-margin instance found"));
    }

    Ok(GradcheckReport {
        instances,
        ml_fixed_max_err: ml_fixed,
        ml_adaptive_max_err: ml_adaptive,
        mm_directional_max_err: mm_err,
        threshold: 1e-4,
    })
}

// ---------------------------------------------------------------------
// tab-separated report rendering

pub fn format_predictions(rows: &[PredictionRow], n_labels: usize) -> String {
    let mut out = String::from("id\tpredicted");
    for y in 0..n_labels {
        out.push_str(&format!("\tlogp_{y}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.id);
        out.push_str(&format!("\t{}", r.predicted));
        for lp in &r.log_posterior {
            out.push_str(&format!("\t{lp}"));
        }
        out.push('\n');
    }
    out
}

pub fn format_evaluation(report: &EvalReport) -> String {
    let mut out = String::from("metric\tvalue\n");
    out.push_str(&format!("accuracy\t{:.6}\n", report.accuracy));
    out.push_str(&format!("n_samples\t{}\n", report.n));
    out.push('\n');
    out.push_str("class\tsupport\trecall\n");
    for (y, (&sup, rec)) in report.supports.iter().zip(&report.per_class_recall).enumerate() {
        out.push_str(&format!("{y}\t{sup}\t{rec:.6}\n"));
    }
    out.push('\n');
    let n = report.confusion.len();
    out.push_str("true\\pred");
    for y in 0..n {
        out.push_str(&format!("\t{y}"));
    }
    out.push('\n');
    for (y, row) in report.confusion.iter().enumerate() {
        out.push_str(&format!("{y}"));
        for c in row {
            out.push_str(&format!("\t{c}"));
        }
        out.push('\n');
    }
    out
}

pub fn format_crossval(cells: &[CellResult]) -> String {
    let mut out = String::from("variant\tn_hidden\tsigma\tfolds\tmean_accuracy\tstd_accuracy\tfold_accuracies\n");
    for c in cells {
        let folds: Vec<String> = c.fold_accuracies.iter().map(|a| format!("{a:.6}")).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
            c.variant,
            c.n_hidden,
            c.sigma,
            c.fold_accuracies.len(),
            c.mean,
            c.std,
            folds.join(",")
        ));
    }
    out
}

pub fn format_audit(audits: &[FoldAudit]) -> String {
    let mut out = String::from(
        "variant\tn_hidden\tsigma\tfold\ttrain_count\ttest_count\tnorm_mean_0\tnorm_std_0\tt_nu\tcodebook_k\taccuracy\n",
    );
    for a in audits {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\n",
            a.variant,
            a.n_hidden,
            a.sigma,
            a.fold,
            a.train_count,
            a.test_count,
            a.norm_mean_0,
            a.norm_std_0,
            a.t_nu.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            a.codebook_k.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            a.accuracy,
        ));
    }
    out
}

pub fn format_gradcheck(report: &GradcheckReport) -> String {
    let mut out = String::from("check\tinstances\tmax_relative_error\tthreshold\tverdict\n");
    let line = |name: &str, err: f64| {
        format!(
            "{name}\t{}\t{err:e}\t{:e}\t{}\n",
            report.instances,
            report.threshold,
            if err <= report.threshold { "pass" } else { "FAIL" }
        )
    };
    out.push_str(&line("ml-gradient-fixed", report.ml_fixed_max_err));
    out.push_str(&line("ml-gradient-adaptive", report.ml_adaptive_max_err));
    out.push_str(&line("mm-subgradient-directional", report.mm_directional_max_err));
    out
}
