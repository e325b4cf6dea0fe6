//! `tbscan`: synthesize corpora, train cascades, evaluate and detect.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tbscan", version, about = "Patchwise two-stage bacillus detector")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Ppm,
    Png,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Train a cascade on a corpus.
    Train(TrainArgs),
    /// Evaluate a cascade on a corpus's test partition.
    Eval(EvalArgs),
    /// Classify every window of one image.
    Detect(DetectArgs),
    /// Print the header of a model or cascade file.
    InspectModel(InspectArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Corpus directory to create.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Cascade file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log (JSON); defaults to the model path with `.log.json`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train stage 2, or store a pass-through.
    #[arg(long, value_enum)]
    stage2: Option<Switch>,
    /// Epochs for both stages.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate for both stages.
    #[arg(long)]
    lr: Option<f32>,
    /// Minibatch size for both stages.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threshold1: Option<f32>,
    #[arg(long)]
    threshold2: Option<f32>,
    /// Patch-area fraction a box must cover for a positive label.
    #[arg(long)]
    min_overlap: Option<f64>,
    /// Also write the balanced stage-1 training set as a patch pack.
    #[arg(long)]
    export_patches: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// Report file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stride: Option<usize>,
    /// `off` evaluates stage 1 alone.
    #[arg(long, value_enum)]
    stage2: Option<Switch>,
    /// Include per-window records in the report.
    #[arg(long)]
    records: bool,
    /// Directory for per-field overlay images.
    #[arg(long)]
    overlays: Option<PathBuf>,
    #[arg(long)]
    min_overlap: Option<f64>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// PPM or PNG view-field.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_enum)]
    stage2: Option<Switch>,
    /// Decisions file (JSON); printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overlay image with accepted windows outlined.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Model (BSCN) or cascade (BCSC) file.
    path: PathBuf,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Detect(a) => commands::detect(cfg, a),
        Command::InspectModel(a) => commands::inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tbscan: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
