//! `m2s`: command-line front end for sparse multi-scan fusion and
//! multi-to-single distillation.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "m2s",
    version,
    about = "Sparse multi-scan fusion and multi-to-single distillation for LiDAR segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarise a scan (.bin), a label file (.label) or a sequence directory
    Inspect { path: PathBuf },
    /// Regenerate instance IDs of one semantic class by FPS clustering
    GenInstances(GenInstancesArgs),
    /// Fuse hard-class instances of past scans into one scan
    Fuse(FuseArgs),
    /// Build the single/fused instance database of a sequence
    BuildAugdb(BuildAugdbArgs),
    /// Verify distillation losses and gradients; prints a pass/fail table
    LossCheck(LossCheckArgs),
    /// Train the toy teacher/student pair and report per-step losses
    TrainToy(TrainToyArgs),
    /// Per-class IoU and mIoU of predicted labels against ground truth
    EvalMiou(EvalMiouArgs),
    /// Write a synthetic street sequence in SemanticKITTI layout
    MakeSynthetic(MakeSyntheticArgs),
}

#[derive(Debug, Args)]
struct FusionFlags {
    /// Key-value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of past scans to fuse
    #[arg(long)]
    window: Option<usize>,
    /// Per-scan centroid displacement above which an instance is moving
    #[arg(long)]
    moving_threshold: Option<f64>,
    /// Use the pose chain only, also for moving instances
    #[arg(long)]
    no_register: bool,
}

#[derive(Debug, Args)]
struct GenInstancesArgs {
    /// Sequence directory
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    scan: usize,
    /// Raw semantic class to relabel
    #[arg(long)]
    class: u16,
    #[arg(long, default_value_t = 2.0)]
    stop_distance: f64,
    #[arg(long, default_value_t = 5)]
    min_points: usize,
    /// Output .label file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    scan: usize,
    #[command(flatten)]
    fusion: FusionFlags,
    /// Output path stem; .bin, .label and .origin are written next to it
    /// [default: <seq>/fused/<scan>]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildAugdbArgs {
    #[arg(long)]
    seq: PathBuf,
    #[command(flatten)]
    fusion: FusionFlags,
    /// Database directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LossCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seeded cases per gradient check
    #[arg(long, default_value_t = 100)]
    cases: usize,
    /// Random inputs per property check
    #[arg(long, default_value_t = 1000)]
    property_cases: usize,
}

#[derive(Debug, Args)]
struct TrainToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    steps: Option<usize>,
    /// Key-value config file (train.*, distill.*, fusion keys); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Train on this sequence directory instead of a synthetic street scene
    #[arg(long)]
    seq: Option<PathBuf>,
    /// Scan of --seq to train on [default: last]
    #[arg(long, requires = "seq")]
    scan: Option<usize>,
    /// Scans in the synthetic street scene
    #[arg(long, default_value_t = 5)]
    scans: usize,
    /// Print every n-th step only
    #[arg(long, default_value_t = 1)]
    every: usize,
}

#[derive(Debug, Args)]
struct EvalMiouArgs {
    /// Directory of predicted .label files
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth .label files (or a sequence with labels/)
    #[arg(long)]
    gt: PathBuf,
    /// Class map file [default: SemanticKITTI]
    #[arg(long)]
    classmap: Option<PathBuf>,
    /// Train classes left out of the evaluation
    #[arg(long, value_delimiter = ',', default_value = "0")]
    ignore: Vec<u32>,
}

#[derive(Debug, Args)]
struct MakeSyntheticArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    scans: usize,
    /// Output sequence directory
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(commands::CliError::Output(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => {
            ExitCode::SUCCESS
        }
        Err(commands::CliError::Output(e)) => {
            eprintln!("error: writing output: {e}");
            ExitCode::from(2)
        }
    }
}
