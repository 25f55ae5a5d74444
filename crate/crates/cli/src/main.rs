//! `miplgp`: synthesize MIPL datasets, train and apply the GP model, and run
//! the repeated-split evaluation protocol.

mod manifest;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use miplgp_core::evaluation::ExperimentConfig;
use miplgp_core::predictor::write_predictions_csv;
use miplgp_core::trainer::write_trace_csv;
use miplgp_core::{
    accuracy, load_base_pool, load_dataset, load_model, make_blobs, random_split, run_experiment, synthesize,
    train, write_dataset, write_model, Algorithm, AlphaSource, Smoothness, SynthesisConfig, TrainConfig, Variant,
};

use manifest::{InputFile, RunManifest};
use output::Outputs;

#[derive(Parser)]
#[command(name = "miplgp", version, about = "Multi-instance partial-label learning with Gaussian processes")]
#[command(after_help = "Set MIPLGP_THREADS to cap worker threads. Outputs do not depend on it.")]
struct Cli {
    /// Log more (-v info, -vv debug). Logs go to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a MIPL dataset (MIPL-JSONL v1) from a labeled CSV pool or Gaussian blobs.
    Synth(SynthArgs),
    /// Train on the train side of a seeded split and save the model.
    Train(TrainArgs),
    /// Label every bag of a dataset with a saved model.
    Predict(PredictArgs),
    /// Repeated seeded splits, accuracy mean±std and paired t-tests.
    Eval(EvalArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
struct SynthArgs {
    /// CSV base pool: one instance per line, label in the last column.
    #[arg(long, group = "source", value_name = "CSV")]
    base: Option<PathBuf>,
    /// Use the built-in Gaussian blob generator instead of a base pool.
    #[arg(long, group = "source")]
    blobs: bool,
    /// Pool labels used as target classes, in MIPL class order (with --base).
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    targets: Vec<usize>,
    /// Pool labels supplying the non-target instances (with --base).
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    reserved: Vec<usize>,
    /// Number of target classes q (with --blobs).
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Feature dimension (with --blobs).
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Pairwise distance between target blob means (with --blobs).
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 100)]
    bags: usize,
    /// Smallest bag size.
    #[arg(long, default_value_t = 5)]
    min_ins: usize,
    /// Largest bag size.
    #[arg(long, default_value_t = 15)]
    max_ins: usize,
    /// Share of ground-truth instances per bag.
    #[arg(long, default_value_t = 0.2)]
    pos_frac: f64,
    /// False-positive candidate labels per bag.
    #[arg(long, default_value_t = 1)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlphaSourceArg {
    PosteriorMean,
    ExpectedTheta,
}

/// Model settings shared by `train` and `eval`.
#[derive(Args)]
struct ModelArgs {
    /// Training iterations T.
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Dirichlet prior α_ε.
    #[arg(long, default_value_t = 1e-4)]
    alpha_eps: f64,
    /// Matérn smoothness: 0.5, 1.5 or 2.5.
    #[arg(long, default_value_t = 2.5, value_parser = parse_nu)]
    nu: f64,
    /// Monte-Carlo samples per test instance.
    #[arg(long, default_value_t = 512)]
    mc: usize,
    /// Base Adam learning rate (cosine-annealed).
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Optimize the kernel lengthscale (held at 1 otherwise).
    #[arg(long)]
    train_lengthscale: bool,
    /// Optimize the kernel output scale (held at 1 otherwise).
    #[arg(long)]
    train_outputscale: bool,
    /// Feed raw features to the GP instead of z-scored ones.
    #[arg(long)]
    no_standardize: bool,
    /// Classifier score used to re-weight α.
    #[arg(long, value_enum, default_value_t = AlphaSourceArg::PosteriorMean)]
    alpha_source: AlphaSourceArg,
}

impl ModelArgs {
    fn config(&self, variant: Variant, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            iterations: self.iters,
            alpha_eps: self.alpha_eps,
            nu: Smoothness::from_nu(self.nu)?,
            mc_samples: self.mc,
            learning_rate: self.lr,
            variant,
            seed,
            standardize: !self.no_standardize,
            train_lengthscale: self.train_lengthscale,
            train_outputscale: self.train_outputscale,
            alpha_source: match self.alpha_source {
                AlphaSourceArg::PosteriorMean => AlphaSource::PosteriorMean,
                AlphaSourceArg::ExpectedTheta => AlphaSource::ExpectedTheta,
            },
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Share of bags on the train side.
    #[arg(long, default_value_t = 0.5)]
    split_frac: f64,
    #[arg(long, default_value = "full", value_parser = parse_variant)]
    variant: Variant,
    /// Seed for the Monte-Carlo α source.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    model_out: PathBuf,
    /// Per-iteration objective and learning rate as CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo samples per instance [default: the model's training setting].
    #[arg(long)]
    mc: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0.5)]
    split_frac: f64,
    /// Comma list from miplgp, miplgp-uniform, miplgp-naive, plknn-mean, plknn-maxmin.
    /// The first one is the reference of the t-tests.
    #[arg(long, default_value = "miplgp,miplgp-uniform,miplgp-naive,plknn-mean,plknn-maxmin", value_parser = parse_algos)]
    algos: AlgoList,
    /// Run i uses split seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// PL-kNN neighbours.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    report_out: PathBuf,
    /// Per-run accuracies as CSV.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

fn parse_nu(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    Smoothness::from_nu(v).map(|_| v).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

/// Parsed as one value so the list keeps its order and duplicate check.
#[derive(Clone)]
struct AlgoList(Vec<Algorithm>);

fn parse_algos(s: &str) -> std::result::Result<AlgoList, String> {
    Algorithm::parse_list(s).map(AlgoList).map_err(|e| e.to_string())
}

pub(crate) fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("MIPLGP_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(miplgp_core::Error::InvalidArgument(format!("MIPLGP_THREADS={s:?} is not a positive integer")).into()),
        },
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn write_manifest(outputs: &mut Outputs, primary: &Path, mut manifest: RunManifest) -> Result<()> {
    let path = manifest::path_for(primary);
    manifest.outputs.push(display(&path));
    outputs.write_bytes(&path, &manifest.to_bytes()?)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthesisConfig {
        target_classes: a.targets.clone(),
        reserved_classes: a.reserved.clone(),
        num_bags: a.bags,
        min_instances: a.min_ins,
        max_instances: a.max_ins,
        positive_fraction: a.pos_frac,
        num_false_positives: a.r,
        seed: a.seed,
    };
    let mut manifest;
    if a.blobs {
        if !a.targets.is_empty() || !a.reserved.is_empty() {
            log::warn!("--targets/--reserved are ignored with --blobs");
        }
        cfg.target_classes = (0..a.classes).collect();
        cfg.reserved_classes = vec![a.classes];
        manifest = RunManifest::new(
            "synth",
            json!({ "source": "blobs", "classes": a.classes, "dim": a.dim, "separation": a.separation, "synthesis": cfg }),
        );
    } else {
        if a.targets.is_empty() {
            return Err(miplgp_core::Error::InvalidArgument("--base needs --targets (comma list of pool labels)".into()).into());
        }
        manifest = RunManifest::new("synth", json!({ "source": "base", "synthesis": cfg }));
    }
    let base = a.base.as_deref();
    if let Some(b) = base {
        manifest.inputs.push(InputFile::hash(b)?);
    }
    manifest.outputs.push(display(&a.out));

    let mut outputs = Outputs::default();
    write_manifest(&mut outputs, &a.out, manifest)?;
    let ds = match base {
        Some(b) => {
            let pool = load_base_pool(b).with_context(|| format!("reading base pool {}", b.display()))?;
            synthesize(&pool, &cfg)?
        }
        None => make_blobs(a.classes, a.dim, a.separation, &cfg)?,
    };
    outputs.write(&a.out, |w| Ok(write_dataset(w, &ds)?))?;
    outputs.commit();
    eprintln!(
        "wrote {} bags ({} instances, q = {}, d = {}) to {}",
        ds.num_bags(),
        ds.num_instances(),
        ds.num_classes(),
        ds.feature_dim(),
        a.out.display()
    );
    Ok(())
}

fn load_data(path: &Path) -> Result<miplgp_core::MiplDataset> {
    load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.model.config(a.variant, a.seed)?;
    let ds = load_data(&a.data)?;
    let mut manifest = RunManifest::new(
        "train",
        json!({ "split_seed": a.split_seed, "split_frac": a.split_frac, "train": cfg }),
    );
    manifest.inputs.push(InputFile::hash(&a.data)?);
    manifest.outputs.push(display(&a.model_out));
    if let Some(t) = &a.trace_out {
        manifest.outputs.push(display(t));
    }
    let mut outputs = Outputs::default();
    write_manifest(&mut outputs, &a.model_out, manifest)?;

    let split = random_split(&ds, a.split_frac, a.split_seed)?;
    let outcome = train(&ds, &split, &cfg)?;
    outputs.write(&a.model_out, |w| Ok(write_model(w, &outcome.model)?))?;
    if let Some(t) = &a.trace_out {
        outputs.write(t, |w| Ok(write_trace_csv(w, &outcome.trace)?))?;
    }
    outputs.commit();
    let last = outcome.trace.last().expect("at least one iteration");
    eprintln!(
        "trained {} on {} bags ({} instances); final objective {:.6}",
        cfg.variant.name(),
        split.train_bag_ids.len(),
        outcome.model.gp.num_train(),
        last.nlml
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let ds = load_data(&a.data)?;
    if ds.feature_dim() != model.feature_dim() {
        return Err(miplgp_core::Error::DimensionMismatch { expected: model.feature_dim(), found: ds.feature_dim() })
            .with_context(|| format!("{} does not match the model's feature dimension", a.data.display()));
    }
    let samples = a.mc.unwrap_or(model.config.mc_samples);
    let mut manifest = RunManifest::new("predict", json!({ "seed": a.seed, "mc_samples": samples }));
    manifest.inputs.push(InputFile::hash(&a.model)?);
    manifest.inputs.push(InputFile::hash(&a.data)?);
    manifest.outputs.push(display(&a.out));
    let mut outputs = Outputs::default();
    write_manifest(&mut outputs, &a.out, manifest)?;

    let preds = miplgp_core::predict_bags(&model, ds.bags(), samples, a.seed)?;
    outputs.write(&a.out, |w| Ok(write_predictions_csv(w, &preds, model.label_space)?))?;
    outputs.commit();
    let truths: Vec<Option<usize>> = preds.iter().map(|p| p.true_label).collect();
    if !preds.is_empty() && truths.iter().all(Option::is_some) {
        let labels: Vec<usize> = preds.iter().map(|p| p.predicted_label).collect();
        eprintln!("{} bags, accuracy {:.4}", preds.len(), accuracy(&labels, &truths)?);
    } else {
        eprintln!("{} bags", preds.len());
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = ExperimentConfig {
        runs: a.runs,
        fraction: a.split_frac,
        base_seed: a.seed,
        train: a.model.config(Variant::Full, 0)?,
        knn_k: a.k,
    };
    if a.runs == 0 {
        return Err(miplgp_core::Error::InvalidArgument("--runs must be at least 1".into()).into());
    }
    let ds = load_data(&a.data)?;
    let names: Vec<&str> = a.algos.0.iter().map(|x| x.name()).collect();
    let mut manifest = RunManifest::new("eval", json!({ "algorithms": names, "experiment": cfg }));
    manifest.inputs.push(InputFile::hash(&a.data)?);
    manifest.outputs.push(display(&a.report_out));
    if let Some(c) = &a.csv_out {
        manifest.outputs.push(display(c));
    }
    let mut outputs = Outputs::default();
    write_manifest(&mut outputs, &a.report_out, manifest)?;

    let report = run_experiment(&ds, &a.algos.0, &cfg)?;
    outputs.write_bytes(&a.report_out, report.to_json()?.as_bytes())?;
    if let Some(c) = &a.csv_out {
        outputs.write(c, |w| Ok(report.write_csv(w)?))?;
    }
    outputs.commit();
    print!("{}", report.summary_table());
    Ok(())
}

/// 2 usage, 3 input/output, 4 numerical failure, 5 dimension mismatch.
fn exit_code(err: &anyhow::Error) -> u8 {
    use miplgp_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::DimensionMismatch { .. } => 5,
                e if e.is_numeric() => 4,
                E::InvalidArgument(_) => 2,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
