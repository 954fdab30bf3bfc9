//! `cvfnet`: train, infer, eval, bench and synth subcommands.
//!
//! Exit codes: 0 success, 2 configuration error, 3 checkpoint mismatch,
//! 4 data error, 1 anything else.

mod commands;
mod overlay;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cvf_core::config::ExperimentConfig;
use cvf_tensor::TensorError;

#[derive(Parser)]
#[command(name = "cvfnet", version, about = "Cross-view LiDAR 3-D object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a per-epoch loss log.
    Train(TrainArgs),
    /// Write one KITTI label file per scene of a dataset.
    Infer(InferArgs),
    /// Score prediction label files against ground-truth label files.
    Eval(EvalArgs),
    /// Time every pipeline stage on synthetic clouds.
    Bench(BenchArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to write (default: OUT/model.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory; overrides `train.data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Without a dataset, train on this many in-memory synthetic scenes.
    #[arg(long, default_value_t = 32)]
    scenes: usize,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write a bird's-eye-view PNG per scene.
    #[arg(long)]
    overlay: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of prediction label files (or an infer output directory).
    #[arg(long)]
    pred: PathBuf,
    /// Dataset directory or directory of ground-truth label files.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10)]
    scenes: usize,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Checkpoint(String),
    Data(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Checkpoint(_) => 3,
            Failure::Data(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<cvf_core::Error> for Failure {
    fn from(e: cvf_core::Error) -> Self {
        use cvf_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => Failure::Config(msg),
            E::Tensor(TensorError::Checkpoint(_)) => Failure::Checkpoint(msg),
            E::Tensor(TensorError::Io(_)) | E::Parse { .. } | E::Data { .. } | E::Io { .. } => Failure::Data(msg),
            E::DegeneratePoint | E::EmptyImage => Failure::Data(msg),
            _ => Failure::Other(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

pub type Outcome = Result<(), Failure>;

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(&common.config).map_err(|e| Failure::Config(e.to_string()))
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train(a) => {
            let cfg = load_config(&a.common)?;
            commands::train(cfg, &a)
        }
        Command::Infer(a) => {
            let cfg = load_config(&a.common)?;
            commands::infer(cfg, &a)
        }
        Command::Eval(a) => {
            let cfg = load_config(&a.common)?;
            commands::eval(cfg, &a)
        }
        Command::Bench(a) => {
            let cfg = load_config(&a.common)?;
            commands::bench(cfg, &a)
        }
        Command::Synth(a) => {
            let cfg = load_config(&a.common)?;
            commands::synth(cfg, &a)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cvfnet: {f}");
            ExitCode::from(f.code())
        }
    }
}
