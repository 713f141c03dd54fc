//! `rfi`: synthesise, split, preprocess, train and evaluate transient RFI
//! classifiers from the command line.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 configuration error,
//! 3 data error, 4 numerical failure during training.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rfi_core::{ErrorKind, ImbalanceMode};
use rfi_core::nn::OptimizerKind;

#[derive(Parser)]
#[command(name = "rfi", version, about = "Transient RFI classification pipeline")]
struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled dataset as JSON Lines.
    Synth(SynthArgs),
    /// Stratified train / validation / test split of a dataset.
    Split(SplitArgs),
    /// Fit a standardizer on training data and apply it.
    Preprocess(PreprocessArgs),
    /// Run the full two-stage training protocol and evaluate on the test split.
    Train(TrainArgs),
    /// Score a checkpoint on a test set, or score a predictions file.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the analytic gradients on a small model.
    Gradcheck(GradcheckArgs),
    /// Write the convolution filters of a checkpoint as CSV.
    FiltersDump(FiltersDumpArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// JSON config: `{"scale", "seed", "counts", "archetypes"}`, all optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Multiply the default per-class counts (floored, at least 3 per class).
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.6, 0.2, 0.2])]
    pub fractions: Vec<f64>,
    /// Downsample every class to the smallest class size before splitting.
    #[arg(long)]
    pub downsample: bool,
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Training split; the standardizer is fitted on this file only.
    #[arg(long)]
    pub train: PathBuf,
    /// Further splits to transform with the fitted standardizer.
    #[arg(long = "apply")]
    pub apply: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub anchor: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Raw dataset (JSON Lines).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single-threaded execution.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    pub imbalance_mode: Option<ImbalanceMode>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub kernel_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub num_filters: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub merge_train_val: Option<bool>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "from_predictions")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_predictions")]
    pub test: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_predictions")]
    pub standardizer: Option<PathBuf>,
    /// CSV of `true,predicted` 1-based labels; skips the model entirely.
    #[arg(long, conflicts_with_all = ["checkpoint", "test", "standardizer"])]
    pub from_predictions: Option<PathBuf>,
    /// Number of classes for `--from-predictions`.
    #[arg(long, default_value_t = rfi_core::NUM_CLASSES)]
    pub num_classes: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// JSON config: `{"model", "batch", "seed"}`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Check a random subset of this many parameters.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Zero one analytic gradient to confirm the check notices.
    #[arg(long)]
    pub mutate: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Args)]
pub struct FiltersDumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<ImbalanceMode, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown imbalance mode {s:?} (downsample, class_weighted, unweighted)"))
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
        .map_err(|_| format!("unknown optimizer {s:?} (adam, sgd)"))
}

fn exit_code(e: &commands::CliError) -> u8 {
    match e {
        commands::CliError::GradCheckFailed { .. } => 1,
        commands::CliError::Core(e) => match e.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let threads = match &cli.command {
        Command::Train(a) if a.deterministic => Some(1),
        _ => cli.threads,
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::FiltersDump(a) => commands::filters_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
