//! Command-line front end for training and evaluating the motion predictor.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "mtgcn", version, about = "Multi-grained trajectory GCN for 3D motion prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    #[arg(long, help = "Flat key = value config file")]
    pub config: Option<PathBuf>,
    #[arg(long, help = "Random seed")]
    pub seed: Option<u64>,
    #[arg(long, help = "Skeleton spec file")]
    pub skeleton: Option<PathBuf>,
    #[arg(long, help = "Output file or directory")]
    pub out: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE", help = "Override any config key (repeatable)")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    #[arg(long, help = "Observed frames T")]
    pub input_frames: Option<usize>,
    #[arg(long, help = "Predicted frames T_out")]
    pub output_frames: Option<usize>,
    #[arg(long, help = "Hidden width H")]
    pub hidden: Option<usize>,
    #[arg(long, help = "Number of MTGCM blocks L")]
    pub layers: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on a directory of sequence files and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, help = "Directory of .seq files")]
        data: Option<PathBuf>,
        #[arg(long, help = "Number of epochs")]
        epochs: Option<usize>,
        #[arg(long, help = "Mini-batch size")]
        batch_size: Option<usize>,
        #[arg(long, help = "Window stride in frames (default T_out)")]
        stride: Option<usize>,
        #[arg(long, help = "Per-epoch metric CSV")]
        log: Option<PathBuf>,
        #[arg(long, help = "Disable mirror augmentation")]
        no_augment: bool,
    },
    /// Predict the frames following a sequence file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, help = "Model checkpoint")]
        checkpoint: Option<PathBuf>,
        #[arg(long, help = "Observed sequence file")]
        input: Option<PathBuf>,
    },
    /// Report per-action MPJPE at fixed horizons.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, help = "Model checkpoint")]
        checkpoint: Option<PathBuf>,
        #[arg(long, help = "Directory of .seq files")]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', help = "Horizons in milliseconds")]
        horizons: Option<Vec<f64>>,
        #[arg(long, help = "Window stride in frames (default T_out)")]
        stride: Option<usize>,
        #[arg(long, help = "Write the text table here as well")]
        table: Option<PathBuf>,
    },
    /// Compare backward gradients with finite differences on a tiny model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, help = "Joint count J")]
        joints: Option<usize>,
    },
    /// Generate synthetic periodic motion.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, help = "Number of sequences")]
        count: Option<usize>,
        #[arg(long, help = "Frames per sequence")]
        length: Option<usize>,
        #[arg(long, help = "Bone length scale")]
        scale: Option<f64>,
    },
    /// Write mirrored copies of sequence files with an `_mt` suffix.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long, help = "Directory of .seq files")]
        data: Option<PathBuf>,
        #[arg(long, help = "A single sequence file")]
        input: Option<PathBuf>,
    },
    /// Print the learnable parameter count.
    Params {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, help = "Joint count J")]
        joints: Option<usize>,
    },
}

/// How a command finished when it did not return an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some inputs were rejected but the rest completed.
    PartialFailure,
    /// A check ran to completion and failed.
    CheckFailed,
}

pub fn run(cli: Cli) -> mtgcn::Result<Outcome> {
    commands::dispatch(cli.command)
}
