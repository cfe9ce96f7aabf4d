//! Command-line front end: train, predict, evaluate, crossval, gradcheck
//! and synth subcommands over the library. Every command is deterministic
//! given its flags and seed. Exit codes: 0 success, 1 failed check,
//! 2 configuration error, 3 schema error, 4 numerical failure.

use clap::{Args, Parser, Subcommand};
use hcrfplus::data::{
    load_bundle, load_dataset, save_bundle, save_dataset_with_header, DataFormat, SynthSpec,
};
use hcrfplus::error::{Error, Result};
use hcrfplus::harness::{
    self, CrossvalOptions, FusionOptions, PredictModeSpec, TrainOptions, Variant,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "hcrfplus", version, about = "Hidden CRFs with privileged information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and persist it as a bundle.
    Train(TrainArgs),
    /// Predict labels with a trained bundle; writes a TSV table.
    Predict(PredictArgs),
    /// Score a bundle on a labeled dataset: accuracy, recall, confusion.
    Evaluate(EvaluateArgs),
    /// Cross-validate a (variant, n-hidden, sigma) grid.
    Crossval(CrossvalArgs),
    /// Audit the analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset path.
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset format: jsonl or csv.
    #[arg(long, default_value = "jsonl")]
    format: String,
}

impl DataArgs {
    fn load(&self) -> Result<hcrfplus::data::Dataset> {
        let format: DataFormat = self.format.parse()?;
        load_dataset(&self.dataset, format)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// ml-hcrf+, aml-hcrf+, mm-hcrf+, amm-hcrf+, hcrf-regular or
    /// hcrf-privileged-as-regular.
    #[arg(long, default_value = "ml-hcrf+")]
    variant: String,
    #[arg(long, default_value_t = 5)]
    n_hidden: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 400)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    grad_tol: f64,
    /// Quasi-Newton memory length.
    #[arg(long, default_value_t = 10)]
    history: usize,
    #[arg(long, default_value_t = 256)]
    codebook_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pin the degrees of freedom of the joint t instead of estimating
    /// them (1e6 gives the Gaussian-conditional ablation).
    #[arg(long)]
    nu_fixed: Option<f64>,
    /// Subgradient step size (max-margin variants).
    #[arg(long, default_value_t = 0.5)]
    step_eta: f64,
    /// Use a constant step instead of eta/sqrt(t).
    #[arg(long)]
    constant_steps: bool,
    /// Cutting planes kept by the bundle method; 0 = plain subgradient.
    #[arg(long, default_value_t = 20)]
    bundle_size: usize,
    /// Impute missing privileged channels by ridge regression.
    #[arg(long)]
    fusion: bool,
    /// Fixed fusion ridge coefficient (default: selected by CV).
    #[arg(long)]
    fusion_eta: Option<f64>,
    /// Output bundle path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// auto, codebook, montecarlo or regular-only.
    #[arg(long, default_value = "auto")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "auto")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated variant list.
    #[arg(long, default_value = "ml-hcrf+")]
    variants: String,
    /// Hidden-state sweep: "a-b" range or comma list.
    #[arg(long, default_value = "3-20")]
    n_hidden_sweep: String,
    /// Comma-separated sigma grid.
    #[arg(long, default_value = "0.001,0.01,0.1,1,10,100,1000")]
    sigma_grid: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "auto")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    mc_samples: usize,
    #[arg(long, default_value_t = 400)]
    max_iters: usize,
    #[arg(long, default_value_t = 256)]
    codebook_k: usize,
    /// Pin the degrees of freedom of the joint t.
    #[arg(long)]
    nu_fixed: Option<f64>,
    /// Where to write the per-fold audit table.
    #[arg(long)]
    audit_output: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test hook: corrupt the analytic gradient to prove the check bites.
    #[arg(long, hide = true)]
    corrupt: bool,
    /// Output path (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    n_labels: usize,
    #[arg(long, default_value_t = 5)]
    n_hidden_true: usize,
    #[arg(long, default_value_t = 10)]
    t_min: usize,
    #[arg(long, default_value_t = 20)]
    t_max: usize,
    #[arg(long, default_value_t = 6)]
    m_x: usize,
    #[arg(long, default_value_t = 5)]
    m_xstar: usize,
    #[arg(long, default_value_t = 80)]
    per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_frac: f64,
    #[arg(long, default_value_t = 20.0)]
    outlier_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn parse_mode(mode: &str, mc_samples: usize) -> Result<PredictModeSpec> {
    match mode {
        "auto" => Ok(PredictModeSpec::Auto),
        "codebook" => Ok(PredictModeSpec::Codebook),
        "montecarlo" => Ok(PredictModeSpec::MonteCarlo { samples: mc_samples }),
        "regular-only" => Ok(PredictModeSpec::RegularOnly),
        other => Err(Error::config(format!("unknown prediction mode '{other}'"))),
    }
}

fn parse_sweep(text: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = text.split_once('-') {
        if !text.contains(',') {
            let lo: usize = a.trim().parse().map_err(|_| Error::config("bad sweep range"))?;
            let hi: usize = b.trim().parse().map_err(|_| Error::config("bad sweep range"))?;
            if lo < 1 || lo > hi {
                return Err(Error::config("sweep range must satisfy 1 <= lo <= hi"));
            }
            return Ok((lo..=hi).collect());
        }
    }
    text.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Error::config("bad sweep entry")))
        .collect()
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::config("bad numeric list entry")))
        .collect()
}

fn run_train(args: TrainArgs) -> Result<i32> {
    let dataset = args.data.load()?;
    let variant: Variant = args.variant.parse()?;
    let opts = TrainOptions {
        variant,
        n_hidden: args.n_hidden,
        sigma: args.sigma,
        max_iters: args.max_iters,
        grad_tol: args.grad_tol,
        history: args.history,
        codebook_k: args.codebook_k,
        seed: args.seed,
        nu_fixed: args.nu_fixed,
        step_eta: args.step_eta,
        diminishing_steps: !args.constant_steps,
        bundle_size: args.bundle_size,
        fusion: if args.fusion {
            Some(FusionOptions { eta: args.fusion_eta, ..Default::default() })
        } else {
            None
        },
    };
    let bundle = harness::train_bundle(&dataset, &opts)?;
    save_bundle(&bundle, &args.output)?;
    eprintln!(
        "trained {} in {} iterations, final objective {:.6}",
        variant,
        bundle.meta.report.iterations,
        bundle.meta.report.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(0)
}

fn run_predict(args: PredictArgs) -> Result<i32> {
    let bundle = load_bundle(&args.bundle)?;
    let dataset = args.data.load()?;
    let mode = parse_mode(&args.mode, args.mc_samples)?;
    let rows = harness::predict_dataset(&bundle, &dataset, &mode, args.seed)?;
    std::fs::write(&args.output, harness::format_predictions(&rows, bundle.dims.n_labels))?;
    Ok(0)
}

fn run_evaluate(args: EvaluateArgs) -> Result<i32> {
    let bundle = load_bundle(&args.bundle)?;
    let dataset = args.data.load()?;
    let mode = parse_mode(&args.mode, args.mc_samples)?;
    let report = harness::evaluate(&bundle, &dataset, &mode, args.seed)?;
    std::fs::write(&args.output, harness::format_evaluation(&report))?;
    eprintln!("accuracy {:.4} on {} samples", report.accuracy, report.n);
    Ok(0)
}

fn run_crossval(args: CrossvalArgs) -> Result<i32> {
    let dataset = args.data.load()?;
    let variants: Vec<Variant> = args
        .variants
        .split(',')
        .map(|s| s.trim().parse::<Variant>())
        .collect::<Result<_>>()?;
    let opts = CrossvalOptions {
        variants,
        n_hidden_list: parse_sweep(&args.n_hidden_sweep)?,
        sigma_list: parse_f64_list(&args.sigma_grid)?,
        folds: args.folds,
        seed: args.seed,
        mode: parse_mode(&args.mode, args.mc_samples)?,
        base: TrainOptions {
            max_iters: args.max_iters,
            codebook_k: args.codebook_k,
            seed: args.seed,
            nu_fixed: args.nu_fixed,
            ..Default::default()
        },
    };
    let (cells, audits) = harness::crossval(&dataset, &opts)?;
    std::fs::write(&args.output, harness::format_crossval(&cells))?;
    if let Some(path) = &args.audit_output {
        std::fs::write(path, harness::format_audit(&audits))?;
    }
    Ok(0)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let report = harness::gradcheck(args.instances, args.seed, args.corrupt)?;
    let text = harness::format_gradcheck(&report);
    match &args.output {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(if report.passed() { 0 } else { 1 })
}

fn run_synth(args: SynthArgs) -> Result<i32> {
    let spec = SynthSpec {
        n_labels: args.n_labels,
        n_hidden_true: args.n_hidden_true,
        t_min: args.t_min,
        t_max: args.t_max,
        m_x: args.m_x,
        m_xstar: args.m_xstar,
        per_class: args.per_class,
        noise: args.noise,
        rho: args.rho,
        outlier_frac: args.outlier_frac,
        outlier_scale: args.outlier_scale,
        seed: args.seed,
    };
    let dataset = hcrfplus::data::synth_generate(&spec)?;
    let header = serde_json::to_string(&spec)
        .map_err(|e| Error::schema(format!("serialize spec: {e}")))?;
    save_dataset_with_header(&dataset, &args.output, DataFormat::Jsonl, Some(&header))?;
    eprintln!("wrote {} sequences to {}", dataset.len(), args.output.display());
    Ok(0)
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Predict(args) => run_predict(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Crossval(args) => run_crossval(args),
        Command::Gradcheck(args) => run_gradcheck(args),
        Command::Synth(args) => run_synth(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
