// temporary debugging scaffold, removed before the suite is final
use hcrfplus::data::*;
use hcrfplus::model::*;
use hcrfplus::robust::*;
use hcrfplus::train::mm::*;
use hcrfplus::train::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
#[ignore]
fn debug_em_nu_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let points: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            // chol of [[1.5,0.5],[0.5,1.0]]
            let l11 = 1.5_f64.sqrt();
            let l21 = 0.5 / l11;
            let l22 = (1.0 - l21 * l21).sqrt();
            vec![1.0 + l11 * z1, -2.0 + l21 * z1 + l22 * z2]
        })
        .collect();
    for (iters, tol) in [(200, 1e-6), (500, 1e-8), (2000, 0.0), (5000, 0.0)] {
        let fit = fit_joint_t_em(
            &points,
            &EmConfig { max_iters: iters, tol, nu_mode: NuMode::Estimate },
        )
        .unwrap();
        println!(
            "iters={iters} tol={tol:e}: nu={:.2} after {} iterations, ll={:.4}",
            fit.params.nu,
            fit.iterations,
            fit.loglik_trace.last().unwrap()
        );
    }
}

fn separable_dataset(seed: u64, n: usize, dims: &FeatureDims, t: usize) -> Vec<SequenceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % dims.n_labels;
            let frames: Vec<Vec<f64>> = (0..t)
                .map(|_| {
                    (0..dims.m_x)
                        .map(|d| {
                            let noise = rng.random::<f64>() * 0.2 - 0.1;
                            if d == label {
                                2.0 + noise
                            } else {
                                noise
                            }
                        })
                        .collect()
                })
                .collect();
            let privileged = Some(
                (0..t)
                    .map(|_| (0..dims.m_xstar).map(|_| rng.random::<f64>() * 0.2).collect())
                    .collect(),
            );
            SequenceSample { id: format!("s{i}"), frames, privileged, label }
        })
        .collect()
}

#[test]
#[ignore]
fn debug_synth_training() {
    use hcrfplus::inference;
    use hcrfplus::train::ml::{train_ml, MlConfig};
    let noise: f64 = std::env::var("SYNTH_NOISE").map(|v| v.parse().unwrap()).unwrap_or(0.3);
    let t_lo: usize = std::env::var("SYNTH_T").map(|v| v.parse().unwrap()).unwrap_or(5);
    let spec = SynthSpec {
        n_labels: 2,
        n_hidden_true: 3,
        t_min: t_lo,
        t_max: t_lo + 3,
        m_x: 4,
        m_xstar: 3,
        per_class: 15,
        noise,
        rho: 0.9,
        outlier_frac: 0.0,
        outlier_scale: 20.0,
        seed: 777,
    };
    let ds = synth_generate(&spec).unwrap();
    let stats = hcrfplus::data::normalize_fit(&ds);
    let ds = hcrfplus::data::normalize_apply(&ds, &stats).unwrap();
    let dims = FeatureDims { n_hidden: 3, ..ds.dims };

    let (params, report) = train_ml(
        &ds.samples,
        dims,
        &MlConfig { max_iters: 120, ..Default::default() },
    )
    .unwrap();
    let correct = ds
        .samples
        .iter()
        .filter(|s| inference::posterior(s, &params, true).unwrap().argmax() == s.label)
        .count();
    println!(
        "ML: {}/{} correct, {} iters, final obj {:.4}",
        correct,
        ds.len(),
        report.iterations,
        report.objective_trace.last().unwrap()
    );

    for bundle_size in [20usize, 0] {
        let sg: f64 = std::env::var("SYNTH_SIGMA").map(|v| v.parse().unwrap()).unwrap_or(1.0);
        let config = MmConfig { max_iters: 400, sigma: sg, bundle_size, ..Default::default() };
        let (params, report) = train_mm(&ds.samples, dims, &config).unwrap();
        let zero = ds.samples.iter().filter(|s| hinge_loss(s, &params).unwrap() == 0.0).count();
        let correct = ds
            .samples
            .iter()
            .filter(|s| inference::posterior(s, &params, true).unwrap().argmax() == s.label)
            .count();
        println!(
            "MM bundle={bundle_size}: zero-hinge {zero}/{}, correct {correct}/{}, best obj {:.4}",
            ds.len(),
            ds.len(),
            report.objective_trace.last().unwrap()
        );
    }
}

#[test]
#[ignore]
fn debug_mm_training() {
    let dims = FeatureDims::new(3, 1, 3, 2).unwrap();
    let samples = separable_dataset(33, 30, &dims, 4);
    for (bundle_size, sigma, eta, iters) in [
        (20usize, 10.0, 0.5, 250usize),
        (20, 1.0, 0.5, 250),
        (0, 1.0, 0.5, 250),
        (0, 1.0, 0.05, 400),
        (0, 10.0, 0.01, 400),
        (0, 10.0, 0.005, 1000),
    ] {
        let config = MmConfig {
            sigma,
            max_iters: iters,
            bundle_size,
            step_rule: StepRule::Diminishing(eta),
            ..Default::default()
        };
        let (params, report) = train_mm(&samples, dims, &config).unwrap();
        let zero = samples.iter().filter(|s| hinge_loss(s, &params).unwrap() == 0.0).count();
        let correct = samples
            .iter()
            .filter(|s| hcrfplus::inference::posterior(s, &params, true).unwrap().argmax() == s.label)
            .count();
        println!(
            "bundle={bundle_size} sigma={sigma} eta={eta} iters={iters}: zero-hinge {zero}/30, correct {correct}/30, best obj {:.4}, |w| {:.3}",
            report.objective_trace.last().unwrap(),
            params.squared_norm().sqrt()
        );
    }
}

#[test]
#[ignore]
fn debug_lupi_benefit() {
    use hcrfplus::harness::*;
    let noise: f64 = std::env::var("SYNTH_NOISE").map(|v| v.parse().unwrap()).unwrap_or(1.0);
    let iters: usize = std::env::var("MAX_ITERS").map(|v| v.parse().unwrap()).unwrap_or(120);
    let spec = SynthSpec {
        n_labels: 4,
        n_hidden_true: 5,
        t_min: 10,
        t_max: 20,
        m_x: 6,
        m_xstar: 5,
        per_class: 80,
        noise,
        rho: 0.9,
        outlier_frac: 0.0,
        outlier_scale: 20.0,
        seed: 2026,
    };
    let ds = synth_generate(&spec).unwrap();
    let t0 = std::time::Instant::now();
    let opts = CrossvalOptions {
        variants: vec![Variant::MlHcrfPlus, Variant::HcrfRegular],
        n_hidden_list: vec![5],
        sigma_list: vec![1.0],
        folds: 5,
        seed: 11,
        mode: PredictModeSpec::Auto,
        base: TrainOptions { max_iters: iters, ..Default::default() },
    };
    let (cells, _) = crossval(&ds, &opts).unwrap();
    // also score the LUPI bundle with the privileged term dropped
    let reg_only = CrossvalOptions {
        variants: vec![Variant::MlHcrfPlus],
        mode: PredictModeSpec::RegularOnly,
        ..opts.clone()
    };
    let (ro_cells, _) = crossval(&ds, &reg_only).unwrap();
    println!(
        "ml-hcrf+ (regular-only prediction): mean {:.4} folds {:?}",
        ro_cells[0].mean, ro_cells[0].fold_accuracies
    );
    for c in &cells {
        println!(
            "{}: mean {:.4} +- {:.4} folds {:?}",
            c.variant, c.mean, c.std, c.fold_accuracies
        );
    }
    let gap = cells[0].mean - cells[1].mean;
    let wins = cells[0]
        .fold_accuracies
        .iter()
        .zip(&cells[1].fold_accuracies)
        .filter(|(a, b)| a > b)
        .count();
    println!(
        "gap {:.4} ({:.1} points), positive folds {wins}/5, elapsed {:.1}s",
        gap,
        gap * 100.0,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
#[ignore]
fn debug_robustness_benefit() {
    use hcrfplus::harness::*;
    let noise: f64 = std::env::var("SYNTH_NOISE").map(|v| v.parse().unwrap()).unwrap_or(1.0);
    let iters: usize = std::env::var("MAX_ITERS").map(|v| v.parse().unwrap()).unwrap_or(120);
    let t0 = std::time::Instant::now();
    let make = |eps: f64| {
        synth_generate(&SynthSpec {
            n_labels: 4,
            n_hidden_true: 5,
            t_min: 10,
            t_max: 20,
            m_x: 6,
            m_xstar: 5,
            per_class: 90,
            noise,
            rho: 0.95,
            outlier_frac: eps,
            outlier_scale: 20.0,
            seed: 777,
        })
        .unwrap()
    };
    // held-out third of the clean run; the contaminated run shares every
    // clean value, so the split is identical
    let split = |ds: &hcrfplus::data::Dataset| {
        let mut train = ds.clone();
        let mut test = ds.clone();
        train.samples.clear();
        test.samples.clear();
        for (i, s) in ds.samples.iter().enumerate() {
            if i % 3 == 2 {
                test.samples.push(s.clone());
            } else {
                train.samples.push(s.clone());
            }
        }
        (train, test)
    };
    let (clean_train, test_ds) = split(&make(0.0));
    // one classifier, trained on clean data; contamination afflicts the
    // paired data the marginalization artifacts are fitted from
    let opts = TrainOptions {
        variant: Variant::MlHcrfPlus,
        n_hidden: 5,
        max_iters: iters,
        seed: 777,
        ..Default::default()
    };
    let clean_bundle = train_bundle(&clean_train, &opts).unwrap();

    let refit = |eps: f64, nu_fixed: Option<f64>| -> hcrfplus::data::ModelBundle {
        use hcrfplus::robust::{build_codebook, fit_joint_t_em, EmConfig, NuMode};
        let (train_ds, _) = split(&make(eps));
        let normed = hcrfplus::data::normalize_apply(&train_ds, &clean_bundle.norm).unwrap();
        let mut joint_points = Vec::new();
        let mut priv_frames = Vec::new();
        for s in &normed.samples {
            for (f, pf) in s.frames.iter().zip(s.privileged.as_ref().unwrap()) {
                let mut v = pf.clone();
                v.extend_from_slice(f);
                joint_points.push(v);
                priv_frames.push(pf.clone());
            }
        }
        let em = EmConfig {
            nu_mode: match nu_fixed {
                Some(nu) => NuMode::Fixed(nu),
                None => NuMode::Estimate,
            },
            ..Default::default()
        };
        let fit = fit_joint_t_em(&joint_points, &em).unwrap();
        let k: usize = std::env::var("SYNTH_K").map(|v| v.parse().unwrap()).unwrap_or(256);
        let cb = build_codebook(&priv_frames, k, opts.seed).unwrap();
        hcrfplus::data::ModelBundle {
            t_params: Some(fit.params),
            codebook: Some(cb),
            ..clean_bundle.clone()
        }
    };

    let mut accs = std::collections::BTreeMap::new();
    for eps in [0.0, 0.1] {
        for (name, nu_fixed) in [("t", None), ("gauss", Some(1e6))] {
            let bundle = refit(eps, nu_fixed);
            let report = evaluate(&bundle, &test_ds, &PredictModeSpec::Codebook, 9).unwrap();
            println!(
                "eps={eps} path={name}: accuracy {:.4} (nu = {:?})",
                report.accuracy,
                bundle.t_params.as_ref().map(|t| t.nu),
            );
            accs.insert((name, (eps * 10.0) as i32), report.accuracy);
        }
    }
    let reg = evaluate(&clean_bundle, &test_ds, &PredictModeSpec::RegularOnly, 9).unwrap();
    println!("weights-only (no privileged term): {:.4}", reg.accuracy);
    let drop_t = accs[&("t", 0)] - accs[&("t", 1)];
    let drop_g = accs[&("gauss", 0)] - accs[&("gauss", 1)];
    println!(
        "drop_t {:.4}, drop_g {:.4}, ratio ok: {}, elapsed {:.1}s",
        drop_t,
        drop_g,
        drop_t <= 0.5 * drop_g,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
#[ignore]
fn debug_bundle_roundtrip() {
    use hcrfplus::data::{load_bundle, save_bundle};
    let dims = FeatureDims::new(2, 1, 2, 3).unwrap();
    let bundle = ModelBundle {
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
            seed: 777,
            config_echo: "{}".into(),
            report: TrainReport {
                objective_trace: vec![3.0, 2.5, 2.25],
                iterations: 3,
                final_grad_norm: 1e-6,
                converged: true,
            },
            timestamp_unix: 123,
        },
    };
    let dir = std::env::temp_dir().join("hcrf_debug");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("b.json");
    save_bundle(&bundle, &path).unwrap();
    let loaded = load_bundle(&path).unwrap();
    if bundle != loaded {
        let a = bundle.params.to_vec();
        let b = loaded.params.to_vec();
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if x != y {
                println!("param {i}: {x:?} vs {y:?} ({:x} vs {:x})", x.to_bits(), y.to_bits());
            }
        }
        println!("meta eq: {}", bundle.meta == loaded.meta);
        println!("norm eq: {}", bundle.norm == loaded.norm);
        println!("t eq: {:?}", bundle.t_params == loaded.t_params);
    }
    assert_eq!(bundle, loaded);
}

#[test]
#[ignore]
fn debug_complexity_timing() {
    use hcrfplus::inference::class_log_partition;
    let t_len = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let frames: Vec<Vec<f64>> =
        (0..t_len).map(|_| (0..2).map(|_| rng.random::<f64>()).collect()).collect();
    let sample = SequenceSample { id: "c".into(), frames, privileged: None, label: 0 };
    let hs = [4usize, 8, 16];
    let params: Vec<ModelParams> = hs
        .iter()
        .map(|&h| ModelParams::init(FeatureDims::new(2, 1, 2, h).unwrap(), 9, 0.5))
        .collect();
    // warmup
    for p in &params {
        for _ in 0..5 {
            std::hint::black_box(class_log_partition(0, &sample, p, false).unwrap());
        }
    }
    let mut best = [f64::INFINITY; 3];
    for _rep in 0..40 {
        for (i, p) in params.iter().enumerate() {
            let t0 = std::time::Instant::now();
            std::hint::black_box(class_log_partition(0, &sample, p, false).unwrap());
            best[i] = best[i].min(t0.elapsed().as_secs_f64());
        }
    }
    println!(
        "min timings: {:.1}us {:.1}us {:.1}us; ratios {:.2} {:.2}",
        best[0] * 1e6,
        best[1] * 1e6,
        best[2] * 1e6,
        best[1] / best[0],
        best[2] / best[1]
    );
}
