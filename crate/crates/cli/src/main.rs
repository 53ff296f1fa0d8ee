//! `icmil`: generate synthetic bag datasets, train, evaluate and export
//! attention scores.
//!
//! Exit codes: 0 success, 2 usage, input or config error, 3 runtime or metric
//! error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use icmil_core::augment::LabelMode;
use icmil_core::bagdata::{load_dataset, save_dataset, split_dataset, BagSize, Dataset, SyntheticSpec};
use icmil_core::checkpoint::{load_checkpoint, save_checkpoint};
use icmil_core::distill::TeacherBranch;
use icmil_core::milnet::AggregatorKind;
use icmil_core::orchestrator::{evaluate_model, instance_pool, run_icmil, FineTuneMode, TrainConfig};
use icmil_core::Error;

#[derive(Debug, Parser)]
#[command(name = "icmil", version, about = "Iterative MIL classifier/embedder coupling on feature bags")]
struct Cli {
    /// Worker threads for per-bag work; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log phase progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Run classifier phase plus ICMIL iterations; writes report and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Per-instance attention table for external plotting.
    ExportAttention(ExportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    bags: usize,
    /// Instances per bag; overridden by --k-min/--k-max.
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 16)]
    d: usize,
    /// Fraction of positive instances in a positive bag.
    #[arg(long, default_value_t = 0.10)]
    rho: f64,
    /// Distance between the class means.
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.5)]
    positive_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for report.json, model.ckpt and the split files.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with TrainConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    backbone: Option<AggregatorKind>,
    #[arg(long)]
    mode: Option<FineTuneMode>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha_w: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    classifier_lr: Option<f64>,
    #[arg(long)]
    embedder_lr: Option<f64>,
    #[arg(long)]
    embedder_batch: Option<usize>,
    #[arg(long)]
    embedder_passes: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha_beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_parser = parse_label_mode)]
    label_mode: Option<LabelMode>,
    #[arg(long)]
    warm_start: bool,
    /// Full-length classifier phase (200 epochs).
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall-clock time in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the result JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6.0)]
    beta: f64,
}

fn parse_label_mode(s: &str) -> Result<LabelMode, String> {
    match s {
        "paper_literal" => Ok(LabelMode::PaperLiteral),
        "kept_fraction" => Ok(LabelMode::KeptFraction),
        other => Err(format!("unknown label mode `{other}`")),
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => Failure::Usage(e.to_string()),
            Error::Dimension { .. } | Error::UndefinedMetric(_) | Error::FrozenViolation(_) => {
                Failure::Runtime(e.to_string())
            }
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let spec = SyntheticSpec {
        num_bags: args.bags,
        bag_size: BagSize {
            min: args.k_min.unwrap_or(args.k),
            max: args.k_max.unwrap_or(args.k),
        },
        d_raw: args.d,
        positive_ratio: args.rho,
        separation: args.delta,
        noise_scale: args.noise,
        positive_bag_fraction: args.positive_fraction,
        seed: args.seed,
    };
    let ds = icmil_core::bagdata::generate_synthetic(&spec)?;
    save_dataset(&ds, &args.out)?;
    let counts = ds.class_counts();
    println!(
        "wrote {} records to {} (negative {}, positive {})",
        ds.len(),
        args.out.display(),
        counts[0],
        counts.get(1).copied().unwrap_or(0)
    );
    Ok(())
}

fn train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $value:expr),* $(,)?) => {
            $(if let Some(v) = $value { cfg.$field = v; })*
        };
    }
    set! {
        backbone <- args.backbone,
        mode <- args.mode,
        iterations <- args.iterations,
        beta <- args.beta,
        alpha_w <- args.alpha_w,
        classifier_epochs <- args.epochs,
        classifier_lr <- args.classifier_lr,
        embedder_lr <- args.embedder_lr,
        embedder_batch <- args.embedder_batch,
        embedder_passes <- args.embedder_passes,
        n <- args.n,
        alpha_beta <- args.alpha_beta,
        gamma <- args.gamma,
        label_mode <- args.label_mode,
        seed <- args.seed,
    }
    if args.no_augment {
        cfg.augmentation = false;
    }
    if args.warm_start {
        cfg.warm_start = true;
    }
    if args.paper_scale {
        cfg.paper_scale = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let cfg = train_config(args)?;
    let ds = load_dataset(&args.data)?;
    let (train, _, test) = split_dataset(&ds, cfg.split, cfg.seed)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    save_dataset(&train, args.out.join("train.jsonl"))?;
    save_dataset(&test, args.out.join("test.jsonl"))?;

    let start = Instant::now();
    let (model, mut report) = run_icmil(&train, &test, &cfg)?;
    if args.timing {
        report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    save_checkpoint(&model, args.out.join("model.ckpt"))?;
    let mut json = report.to_json();
    json.push('\n');
    write_file(&args.out.join("report.json"), json.as_bytes())?;

    for e in &report.evaluations {
        println!(
            "iteration {}: auc {:.4} f1 {:.4} acc {:.4} ({} bags)",
            e.iteration, e.metrics.auc, e.metrics.f1, e.metrics.acc, e.metrics.count
        );
    }
    println!("report and checkpoint written to {}", args.out.display());
    Ok(())
}

fn load_pair(checkpoint: &Path, data: &Path) -> CliResult<(icmil_core::milnet::MilModel, Dataset)> {
    let model = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    if ds.d_raw != model.embedder.input_dim() {
        return Err(Failure::Runtime(format!(
            "dataset has d_raw={} but the checkpoint expects {}",
            ds.d_raw,
            model.embedder.input_dim()
        )));
    }
    if ds.num_classes != model.classifier.num_classes() {
        return Err(Failure::Runtime(format!(
            "dataset has {} classes but the checkpoint predicts {}",
            ds.num_classes,
            model.classifier.num_classes()
        )));
    }
    Ok((model, ds))
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let (model, ds) = load_pair(&args.checkpoint, &args.data)?;
    let result = evaluate_model(&model, &ds)?;
    let mut json = serde_json::to_string_pretty(&result).expect("result serializes");
    json.push('\n');
    print!("{json}");
    if let Some(out) = &args.out {
        write_file(out, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> CliResult<()> {
    if !(args.beta > 0.0 && args.beta.is_finite()) {
        return Err(Failure::Usage(format!("beta must be positive, got {}", args.beta)));
    }
    let (model, ds) = load_pair(&args.checkpoint, &args.data)?;
    let teacher = TeacherBranch::from_model(&model);
    let pool = instance_pool(&teacher, &ds, args.beta)?;
    let mut out = String::from("bag_id\tinstance\traw_attention\tnormalized_attention\tconfidence\n");
    for p in &pool {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            ds.bags[p.bag].id, p.instance, p.raw_attention, p.normalized_attention, p.confidence
        ));
    }
    write_file(&args.out, out.as_bytes())?;
    println!("{} instances from {} bags written to {}", pool.len(), ds.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportAttention(a) => cmd_export(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
