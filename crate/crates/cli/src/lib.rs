//! `attnct` command-line front end.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use attnct::Error;
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "attnct",
    version,
    about = "Residual attention classifier for CT slices: data, training, evaluation and saliency",
    after_help = "Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical abort.\n\
                  A score strictly greater than the threshold predicts the positive (covid) class."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic blob dataset.
    Synth(SynthArgs),
    /// Train a model and write checkpoints, the epoch log and curves.
    Train(TrainArgs),
    /// Train over an optimizer / learning-rate grid and tabulate held-out accuracy.
    Sweep(SweepArgs),
    /// Score the test split and write threshold sweep, ROC, PR, histograms and a summary.
    Eval(EvalArgs),
    /// Compute a saliency map for one image.
    Explain(ExplainArgs),
}

/// Options shared by every command that reads a run configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key=value configuration file (a `run_config.txt` from an earlier run works).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Global seed; falls back to the config file, then ATTNCT_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Images per class.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Falls back to ATTNCT_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of each class written to the test split.
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    /// Replace generated files in a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Lines of `optimizer,learning_rate`; a built-in five-row grid when omitted.
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Comma-separated, increasing; defaults to 0.1,0.2,...,0.9.
    #[arg(long, value_name = "LIST")]
    pub thresholds: Option<String>,
    /// Threshold for the confusion matrix and summary (default 0.5).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Resample images to the model's input size instead of rejecting them.
    #[arg(long)]
    pub resize: bool,
    /// Also score saliency localization on masked positives with this method.
    #[arg(long, value_name = "METHOD")]
    pub localize: Option<String>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub image: Option<PathBuf>,
    /// gradcam, gradcampp or occlusion.
    #[arg(long)]
    pub method: Option<String>,
    /// Activation to explain; defaults to the last attention module.
    #[arg(long, value_name = "PATH")]
    pub layer: Option<String>,
    /// Occlusion patch side in pixels.
    #[arg(long)]
    pub patch: Option<usize>,
    /// Occlusion stride in pixels.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Binary ground-truth mask; prints the localization score.
    #[arg(long, value_name = "PATH")]
    pub mask: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Resample the image to the model's input size instead of rejecting it.
    #[arg(long)]
    pub resize: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Lookup { .. } | Error::Dimension { .. } => 2,
        Error::Numerical { .. } => 4,
        Error::Data(_)
        | Error::Io { .. }
        | Error::Format(_)
        | Error::Input(_)
        | Error::State(_)
        | Error::Consistency(_) => 3,
    }
}

pub fn run(cli: Cli) -> attnct::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Explain(a) => commands::explain(&a),
    }
}
