mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixsei_core::Error;

use config::Precision;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("MIXSEI_GIT_DESCRIBE"), ")");

/// Multi-emitter RF fingerprint workbench.
#[derive(Parser)]
#[command(name = "mixsei", version = VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled dataset file.
    Synth(SynthArgs),
    /// Train a model on a dataset file and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write the per-SNR CSV report.
    Eval(EvalArgs),
    /// Print parameter counts for a range of emitter counts.
    Paramcount(ParamcountArgs),
    /// Merge CSV reports from several runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    /// Write train/val/test files partitioned 80/10/10.
    All,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Examples per SNR point.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Number of emitters.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = ["full", "half"])]
    pub overlap: Option<String>,
    #[arg(long, value_parser = ["awgn", "rician"])]
    pub channel: Option<String>,
    /// Comma-separated SNR grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr: Option<Vec<f64>>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Optional validation set, scored after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Config file; defaults to the one embedded in the dataset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["smei", "baseline"])]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Channel width multiplier for the extractor.
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the epoch log as JSON lines.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct ParamcountArgs {
    #[arg(long, value_parser = ["smei", "baseline", "both"], default_value = "both")]
    pub arch: String,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 5)]
    pub k_max: usize,
    #[arg(long, default_value_t = 1.0)]
    pub width: f64,
}

#[derive(Args)]
pub struct ReportArgs {
    /// CSV reports written by `eval`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// 2 config, 3 I/O or corrupt file, 4 shape or format incompatibility.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::Aliasing { .. } | Error::BufferTooShort { .. } => 2,
        Error::Io(_) | Error::Truncated(_) | Error::Checksum { .. } | Error::Manifest(_) => 3,
        Error::ShapeMismatch { .. } | Error::BadMagic { .. } | Error::UnsupportedVersion { .. } => 4,
    }
}

fn init_threads() -> Result<(), Error> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threads = match std::env::var("MIXSEI_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n.min(available),
            _ => {
                return Err(Error::Config(format!(
                    "MIXSEI_THREADS must be a positive integer, got {v:?}"
                )))
            }
        },
        Err(_) => available,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Paramcount(a) => commands::paramcount(a),
        Command::Report(a) => commands::report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixsei: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
