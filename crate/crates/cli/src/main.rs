use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clefov_core::eval::ExperimentId;
use clefov_core::Method;

mod commands;

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "CLEFOV_THREADS";

#[derive(Parser, Debug)]
#[command(name = "clefov", version, about = "Circular field-of-view CLE image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the seeded two-domain synthetic dataset.
    Gen(GenArgs),
    /// Dataset counts and per-site median-intensity histograms.
    Stats(StatsArgs),
    /// Write circularly extrapolated copies of every frame.
    Preprocess(PreprocessArgs),
    /// Train one model on the whole dataset.
    Train(TrainArgs),
    /// Run an experiment design and report metrics.
    Eval(EvalArgs),
    /// Export class activation maps (image models) or patch maps (patch models).
    Cam(CamArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2018)]
    seed: u64,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    frames_per_patient: Option<usize>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Per-site histograms of in-FOV median raw values.
    #[arg(long)]
    by_site: bool,
    #[arg(long, default_value_t = 24)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Hyperparameters shared by `train` and `eval`.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Patch-net epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Whole-image head learning rate.
    #[arg(long)]
    pub head_lr: Option<f64>,
    /// Whole-image stem learning rate relative to the head.
    #[arg(long)]
    pub stem_lr_multiplier: Option<f64>,
    /// Pretrained stem weights in checkpoint format.
    #[arg(long)]
    pub stem_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = parse_experiment)]
    experiment: ExperimentId,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Train folds one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct CamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Frame id as listed in the manifest.
    #[arg(long)]
    frame: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: clefov_core::Error| e.to_string())
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse().map_err(|e: clefov_core::Error| e.to_string())
}

fn init_threads() -> clefov_core::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| clefov_core::Error::Usage(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| clefov_core::Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Gen(a) => commands::gen(a.out, a.seed, a.patients, a.frames_per_patient),
        Command::Stats(a) => commands::stats(a.dataset, a.by_site, a.bins, a.out),
        Command::Preprocess(a) => commands::preprocess(a.dataset, a.out),
        Command::Train(a) => commands::train(a.dataset, a.model, a.out),
        Command::Eval(a) => commands::eval(a.dataset, a.experiment, a.model, a.threshold, a.out, a.sequential),
        Command::Cam(a) => commands::cam(a.checkpoint, a.dataset, a.frame, a.out, a.alpha),
    });
    match result {
        Ok(summary) => {
            // A closed pipe on stdout is not a failure of the command itself.
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                clefov_core::Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
