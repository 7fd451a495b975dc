//! `stabn`: generate synthetic clips, train, evaluate with attention
//! inversion, and export attention overlays.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data or format,
//! 3 numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stabn_core::Error;

#[derive(Debug, Parser)]
#[command(name = "stabn", version, about = "Spatio-temporal attention branch network on synthetic motion clips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train and validation datasets.
    Gen(GenArgs),
    /// Train a model; writes the best checkpoint and an epoch log.
    Train(TrainArgs),
    /// Accuracy under attention inversion, plus localization scores.
    Eval(EvalArgs),
    /// Render attention overlays for one clip.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output directory for train.stvid, val.stvid and effective.cfg.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` config file with `synth.*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    shape_size: Option<usize>,
    /// Motion window length in frames.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory holding train.stvid and val.stvid.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for best.ckpt, train_log.txt and effective.cfg.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` config file with `model.*` and `train.*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    min_lr: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Seeds initialization, shuffling and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Channels per residual stage, comma separated.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Invert {
    None,
    Spatial,
    Temporal,
    Both,
    All,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset file, or a directory containing val.stvid.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Invert::All)]
    invert: Invert,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Optional directory for report.txt and effective.cfg.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset file, or a directory containing val.stvid.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
    /// Overlay opacity in [0, 1].
    #[arg(long, default_value_t = stabn_core::explain::DEFAULT_ALPHA)]
    alpha: f64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) => 1,
        Error::Numerical(_) => 3,
        Error::Input(_) | Error::Format(_) | Error::Io { .. } | Error::Internal(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Explain(a) => commands::explain(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
