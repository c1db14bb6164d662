//! `vfi`: training, fine-tuning, interpolation, evaluation and ablation
//! runs for the cycle-consistent frame interpolation model.

mod commands;
mod failure;
mod manifest;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vfi", version, about = "Unsupervised video frame interpolation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Debug, Args)]
pub struct Common {
    /// Flat TOML file of training settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key=value` override, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Frame rate assumed for frame directories.
    #[arg(long, global = true, default_value_t = 30.0)]
    pub fps: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trains a model from scratch (or resumes) in the configured mode.
    Train {
        /// Dataset: a directory, manifest file or `synthetic:COUNT[:SEED]`.
        #[arg(long)]
        data: String,
        /// Held-out windows for validation PSNR.
        #[arg(long)]
        val: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Frozen teacher for pseudo-supervised modes.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Continue from `OUT/latest.ckpt` if present.
        #[arg(long)]
        resume: bool,
        /// Ground-truth frames per window in supervised mode.
        #[arg(long, default_value_t = 1)]
        intermediate: usize,
    },
    /// Fine-tunes a checkpoint, using it as the frozen teacher
    /// (cc_plus_ps unless the mode is overridden).
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        val: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes `n` frames between every consecutive pair of input frames.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Scores checkpoints and baselines on windows of `n + 2` frames.
    Eval {
        /// One checkpoint per seed of the same method.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Name of the checkpoint row.
        #[arg(long, default_value = "model")]
        name: String,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss-weight and objective ablations.
    Ablate {
        #[arg(value_enum)]
        kind: Ablation,
        /// Pre-trained model; the teacher of the sweep.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: String,
        #[arg(long)]
        val: String,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated lambda_rp values.
        #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_GRID)]
        grid: Vec<f64>,
    },
    /// Keeps every `factor`-th frame of each clip directory.
    Subsample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        factor: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    LambdaRpSweep,
    LongStep,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match cli.command {
        Command::Train {
            data,
            val,
            out,
            teacher,
            resume,
            intermediate,
        } => commands::train(c, &data, val.as_deref(), &out, teacher.as_deref(), resume, intermediate),
        Command::Finetune { checkpoint, data, val, out } => commands::finetune(c, &checkpoint, &data, val.as_deref(), &out),
        Command::Interpolate { checkpoint, input, output, n } => commands::interpolate(c, &checkpoint, &input, &output, n),
        Command::Eval {
            checkpoint,
            name,
            data,
            n,
            out,
        } => commands::eval(c, &checkpoint, &name, &data, n, &out),
        Command::Ablate {
            kind,
            checkpoint,
            data,
            val,
            out,
            grid,
        } => commands::ablate(c, kind, checkpoint.as_deref(), &data, &val, &out, &grid),
        Command::Subsample { input, output, factor } => commands::subsample(c, &input, &output, factor),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit()
        }
    }
}
