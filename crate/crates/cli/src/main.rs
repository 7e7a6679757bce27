use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Bad flags or inconsistent arguments; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(
    name = "depthscene",
    version,
    about = "Depth and RGB-D scene recognition pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic RGB-D corpus and its manifest.
    GenData(GenDataArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Activation rates and filter visualisation for one conv layer.
    Diag(DiagArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Wsp,
    Finetune,
    Temporal,
    Joint,
    Scratch,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Wsp => "wsp",
            Stage::Finetune => "finetune",
            Stage::Temporal => "temporal",
            Stage::Joint => "joint",
            Stage::Scratch => "scratch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Rgb,
    Depth,
    Rgbd,
}

impl ModalityArg {
    pub fn as_str(self) -> &'static str {
        match self {
            ModalityArg::Rgb => "rgb",
            ModalityArg::Depth => "depth",
            ModalityArg::Rgbd => "rgbd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Aggregate {
    None,
    Ave,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    /// Number of scene classes, at most 10.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Stills per class, split 60/40 into train and test.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Videos per class, split 60/40 into train and test.
    #[arg(long)]
    pub videos_per_class: Option<usize>,
    /// Raw frames rendered per video before keyframe selection.
    #[arg(long)]
    pub video_frames: Option<usize>,
    /// Depth beyond this many metres is missing.
    #[arg(long)]
    pub sensor_range: Option<f64>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: Stage,
    #[arg(long, value_enum)]
    pub modality: ModalityArg,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint from the preceding stage (the depth branch for rgbd).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// RGB branch checkpoint for `--modality rgbd`.
    #[arg(long)]
    pub init_rgb: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Channel width multiplier of newly built networks.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub patch_grid: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// LSTM hidden width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Keyframes per segment `T`.
    #[arg(long)]
    pub segment_len: Option<usize>,
    #[arg(long)]
    pub fusion_hidden: Option<usize>,
    /// Comma-separated layer or parameter names kept fixed.
    #[arg(long)]
    pub freeze: Option<String>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub aggregate: Aggregate,
    /// Retrain a class-weighted linear head on train-split features with this exponent.
    #[arg(long)]
    pub wsvm_p: Option<f64>,
    #[arg(long, default_value_t = 9)]
    pub segment_len: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 20)]
    pub svm_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub svm_lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct DiagArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub layer: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Probe images of this modality instead of the checkpoint's own.
    #[arg(long, value_enum)]
    pub modality: Option<ModalityArg>,
    /// Branch to inspect in a fused checkpoint.
    #[arg(long, value_enum, default_value = "depth")]
    pub branch: ModalityArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<depthscene::Error>() {
        Some(depthscene::Error::UnknownLayer { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Diag(a) => commands::diag(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
