//! Command-line front end.
//!
//! Every setting resolves as: command-line flag, then `MLAGRU_*`
//! environment variable, then the `--config` key=value file, then the
//! built-in default. The resolved settings are written into each run's
//! manifest, from which `rerun` repeats the run.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::ConfigFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mlagru", version, about = "Gesture-to-note classifier: data, training, evaluation and streaming inference")]
pub struct Cli {
    /// key=value settings file (lowest precedence above defaults).
    #[arg(long, global = true, env = "MLAGRU_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Log filter for the JSON log stream on stderr (e.g. `info`, `debug`).
    #[arg(long, global = true, env = "MLAGRU_LOG", default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled dataset (GLD1).
    SynthData(SynthArgs),
    /// Train a model on a stratified split of a dataset.
    Train(TrainArgs),
    /// Evaluate a model on a dataset: accuracy, confusion matrix, ROC/AUC.
    Eval(EvalArgs),
    /// Compare two evaluation summaries on the same test set.
    Compare(CompareArgs),
    /// Measure single-sequence inference latency and throughput.
    Bench(BenchArgs),
    /// Run the streaming inference server.
    Serve(ServeArgs),
    /// Stream a recorded dataset through the engine offline and print note events.
    Predict(PredictArgs),
    /// Write the class/audio manifest.
    Classes(ClassesArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloatWidth {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchVariant {
    MlaGru,
    ClassicalGru,
    Both,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output GLD1 file [default: data.gld].
    #[arg(long, env = "MLAGRU_OUT", value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Sequences per class [default: 30].
    #[arg(long, env = "MLAGRU_PER_CLASS", value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: Option<u64>,
    /// Standard deviation of per-coordinate Gaussian noise [default: 0.02].
    #[arg(long, env = "MLAGRU_NOISE")]
    pub noise: Option<f64>,
    /// Fraction of samples with one hand block zeroed [default: 0.2].
    #[arg(long, env = "MLAGRU_ABSENT_HAND_FRACTION")]
    pub absent_hand_fraction: Option<f64>,
    /// Random seed [default: 0].
    #[arg(long, env = "MLAGRU_SEED")]
    pub seed: Option<u64>,
    /// Manifest path [default: <out>.manifest.json].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Input GLD1 dataset.
    #[arg(long, env = "MLAGRU_DATA", value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Output directory [default: run].
    #[arg(long, env = "MLAGRU_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Model variant [default: mla-gru].
    #[arg(long, env = "MLAGRU_VARIANT")]
    pub variant: Option<crate::model::Variant>,
    /// Training epochs [default: 100].
    #[arg(long, env = "MLAGRU_EPOCHS", value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    /// Mini-batch size [default: 128].
    #[arg(long, env = "MLAGRU_BATCH_SIZE", value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long, env = "MLAGRU_LEARNING_RATE")]
    pub learning_rate: Option<f64>,
    /// Adam first-moment decay [default: 0.9].
    #[arg(long, env = "MLAGRU_BETA1")]
    pub beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.999].
    #[arg(long, env = "MLAGRU_BETA2")]
    pub beta2: Option<f64>,
    /// Adam epsilon [default: 1e-8].
    #[arg(long, env = "MLAGRU_EPSILON")]
    pub epsilon: Option<f64>,
    /// Clip the global gradient norm to this value [default: off].
    #[arg(long, env = "MLAGRU_CLIP_NORM")]
    pub clip_norm: Option<f64>,
    /// Fraction of each class used for training [default: 0.8].
    #[arg(long, env = "MLAGRU_TRAIN_FRACTION")]
    pub train_fraction: Option<f64>,
    /// Seed for the split, initialisation and batch order [default: 0].
    #[arg(long, env = "MLAGRU_SEED")]
    pub seed: Option<u64>,
    /// Class manifest; the canonical table is used when absent.
    #[arg(long, env = "MLAGRU_CLASSES", value_name = "PATH")]
    pub classes: Option<PathBuf>,
    /// Also write learning-curve SVGs [default: false].
    #[arg(long, env = "MLAGRU_PLOTS", num_args = 0..=1, default_missing_value = "true")]
    pub plots: Option<bool>,
    /// Manifest path [default: <out-dir>/manifest.json].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// GMD1 model file.
    #[arg(long, env = "MLAGRU_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// GLD1 dataset to evaluate on.
    #[arg(long, env = "MLAGRU_DATA", value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Output directory [default: eval].
    #[arg(long, env = "MLAGRU_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Training history (history.json) to attach to the summary.
    #[arg(long, env = "MLAGRU_HISTORY", value_name = "PATH")]
    pub history: Option<PathBuf>,
    /// Arithmetic width for inference [default: f64].
    #[arg(long, env = "MLAGRU_FLOAT", value_enum)]
    pub float: Option<FloatWidth>,
    /// Recorded in the manifest; evaluation itself is deterministic [default: 0].
    #[arg(long, env = "MLAGRU_SEED")]
    pub seed: Option<u64>,
    /// Also write confusion-matrix and ROC SVGs [default: false].
    #[arg(long, env = "MLAGRU_PLOTS", num_args = 0..=1, default_missing_value = "true")]
    pub plots: Option<bool>,
    /// Manifest path [default: <out-dir>/manifest.json].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Baseline evaluation summary (summary.json).
    #[arg(long, value_name = "PATH")]
    pub a: Option<PathBuf>,
    /// Candidate evaluation summary (summary.json).
    #[arg(long, value_name = "PATH")]
    pub b: Option<PathBuf>,
    /// Output directory [default: compare].
    #[arg(long, env = "MLAGRU_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Recorded in the manifest [default: 0].
    #[arg(long, env = "MLAGRU_SEED")]
    pub seed: Option<u64>,
    /// Also write comparison SVGs [default: false].
    #[arg(long, env = "MLAGRU_PLOTS", num_args = 0..=1, default_missing_value = "true")]
    pub plots: Option<bool>,
    /// Manifest path [default: <out-dir>/manifest.json].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model variant(s) to time with freshly initialised weights [default: both].
    #[arg(long, env = "MLAGRU_VARIANT", value_enum)]
    pub variant: Option<BenchVariant>,
    /// Time a saved model instead of fresh ones.
    #[arg(long, env = "MLAGRU_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Timed iterations [default: 200].
    #[arg(long, env = "MLAGRU_ITERATIONS")]
    pub iterations: Option<usize>,
    /// Untimed warm-up runs [default: 10].
    #[arg(long, env = "MLAGRU_WARMUP")]
    pub warmup: Option<usize>,
    /// Arithmetic width [default: f32].
    #[arg(long, env = "MLAGRU_FLOAT", value_enum)]
    pub float: Option<FloatWidth>,
    /// Seed for initialisation and inputs [default: 0].
    #[arg(long, env = "MLAGRU_SEED")]
    pub seed: Option<u64>,
    /// JSON report path [default: bench.json].
    #[arg(long, env = "MLAGRU_OUT", value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Manifest path [default: <out>.manifest.json].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// GMD1 model file.
    #[arg(long, env = "MLAGRU_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Class manifest; the canonical table is used when absent.
    #[arg(long, env = "MLAGRU_CLASSES", value_name = "PATH")]
    pub classes: Option<PathBuf>,
    /// Audio directory for the canonical table [default: sounds].
    #[arg(long, env = "MLAGRU_AUDIO_DIR", value_name = "DIR")]
    pub audio_dir: Option<PathBuf>,
    /// Listen address [default: 127.0.0.1:7878].
    #[arg(long, env = "MLAGRU_LISTEN")]
    pub listen: Option<String>,
    /// Minimum confidence for a note event [default: 0.7].
    #[arg(long, env = "MLAGRU_THRESHOLD")]
    pub threshold: Option<f64>,
    /// Frames between predictions once the window is full [default: 30].
    #[arg(long, env = "MLAGRU_STRIDE", value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: Option<u64>,
    /// Frames buffered per connection before the oldest are dropped [default: 256].
    #[arg(long, env = "MLAGRU_QUEUE_CAPACITY", value_parser = clap::value_parser!(u64).range(1..))]
    pub queue_capacity: Option<u64>,
    /// Recorded in the manifest [default: 0].
    #[arg(long, env = "MLAGRU_SEED")]
    pub seed: Option<u64>,
    /// Manifest written at shutdown [default: serve.manifest.json].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// GMD1 model file.
    #[arg(long, env = "MLAGRU_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// GLD1 recording; its sequences are concatenated into one frame stream.
    #[arg(long, env = "MLAGRU_DATA", value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Class manifest; the canonical table is used when absent.
    #[arg(long, env = "MLAGRU_CLASSES", value_name = "PATH")]
    pub classes: Option<PathBuf>,
    /// Audio directory for the canonical table [default: sounds].
    #[arg(long, env = "MLAGRU_AUDIO_DIR", value_name = "DIR")]
    pub audio_dir: Option<PathBuf>,
    /// Minimum confidence for a note event [default: 0.7].
    #[arg(long, env = "MLAGRU_THRESHOLD")]
    pub threshold: Option<f64>,
    /// Frames between predictions once the window is full [default: 30].
    #[arg(long, env = "MLAGRU_STRIDE", value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: Option<u64>,
    /// Arithmetic width [default: f32].
    #[arg(long, env = "MLAGRU_FLOAT", value_enum)]
    pub float: Option<FloatWidth>,
    /// Recorded in the manifest [default: 0].
    #[arg(long, env = "MLAGRU_SEED")]
    pub seed: Option<u64>,
    /// Events as JSON lines [default: events.jsonl].
    #[arg(long, env = "MLAGRU_OUT", value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Manifest path [default: <out>.manifest.json].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassesArgs {
    /// Audio directory the manifest points into [default: sounds].
    #[arg(long, env = "MLAGRU_AUDIO_DIR", value_name = "DIR")]
    pub audio_dir: Option<PathBuf>,
    /// Output path [default: classes.tsv].
    #[arg(long, env = "MLAGRU_OUT", value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Recorded in the manifest [default: 0].
    #[arg(long, env = "MLAGRU_SEED")]
    pub seed: Option<u64>,
    /// Manifest path [default: <out>.manifest.json].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// Manifest of the run to repeat.
    pub manifest: PathBuf,
    /// Write the repeated run's manifest here instead of over the original.
    #[arg(long, value_name = "PATH")]
    pub write_manifest: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Primary results go to `out`.
pub fn run_with_args<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    report(run(cli, out))
}

/// Maps a result to an exit code, logging failures.
pub fn report(result: CliResult<()>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = e.exit_code();
            match &e {
                CliError::Usage(msg) => tracing::error!(kind = "usage", exit_code = code, "{msg}"),
                CliError::Runtime(err) => tracing::error!(kind = "runtime", exit_code = code, "{err:#}"),
            }
            code
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::SynthData(a) => commands::synth(commands::SynthSettings::resolve(&a, &file)?, a.manifest, out).map(drop),
        Command::Train(a) => commands::train(commands::TrainSettings::resolve(&a, &file)?, a.manifest, out).map(drop),
        Command::Eval(a) => commands::eval(commands::EvalSettings::resolve(&a, &file)?, a.manifest, out).map(drop),
        Command::Compare(a) => {
            commands::compare(commands::CompareSettings::resolve(&a, &file)?, a.manifest, out).map(drop)
        }
        Command::Bench(a) => commands::bench(commands::BenchSettings::resolve(&a, &file)?, a.manifest, out).map(drop),
        Command::Serve(a) => commands::serve(commands::ServeSettings::resolve(&a, &file)?, a.manifest, out).map(drop),
        Command::Predict(a) => {
            commands::predict(commands::PredictSettings::resolve(&a, &file)?, a.manifest, out).map(drop)
        }
        Command::Classes(a) => {
            commands::classes(commands::ClassesSettings::resolve(&a, &file)?, a.manifest, out).map(drop)
        }
        Command::Rerun(a) => commands::rerun(&a.manifest, a.write_manifest, out),
    }
}
