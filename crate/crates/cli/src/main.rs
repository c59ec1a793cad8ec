//! `driftforest` — reproducible online malware-detection experiments.
//!
//! Subcommands cover the whole pipeline: `preprocess` raw telemetry,
//! `enrich` with release years, `synth` generate a desk-scale stream,
//! `run-batch` / `run-online` / `scarcity` run the three experiment
//! protocols, and `report` compares two persisted runs. Every run writes a
//! manifest capturing its full configuration and seed, so experiments replay
//! exactly.

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// A command failure with a machine-parseable code. `usage` exits 2,
/// everything else exits 1.
#[derive(Debug)]
pub struct CmdError {
    pub code: &'static str,
    pub message: String,
}

impl CmdError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        Self::new("io", format!("{context}: {err}"))
    }
}

pub type CmdResult<T> = Result<T, CmdError>;

#[derive(Parser)]
#[command(
    name = "driftforest",
    version,
    about = "Online malware detection over flattened process-telemetry snapshots"
)]
struct Cli {
    /// key=value configuration file; explicit flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw per-process table and flatten it into per-timestamp rows
    Preprocess(PreprocessArgs),
    /// Attach release-year ranks to a flattened dataset
    Enrich(EnrichArgs),
    /// Generate a synthetic flattened stream
    Synth(SynthArgs),
    /// Random-split comparison: batch forest vs predict-only online forest
    RunBatch(RunBatchArgs),
    /// Temporal split: test-then-train online forest vs frozen batch forest
    RunOnline(RunOnlineArgs),
    /// Label-scarcity sweep over the temporal protocol
    Scarcity(ScarcityArgs),
    /// Compare two persisted runs from their instance logs
    Report(ReportArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw delimited table (comma or tab), one row per process-snapshot
    #[arg(long)]
    input: PathBuf,
    /// Flattened output file
    #[arg(long)]
    out: PathBuf,
    /// Maximum processes per snapshot
    #[arg(long)]
    m_max: Option<usize>,
    /// Features per process (32 selects the full telemetry schema)
    #[arg(long)]
    n: Option<usize>,
    /// Shorthand for the full 227x32 telemetry shape
    #[arg(long)]
    paper_shape: bool,
    /// Column holding the snapshot ordinal
    #[arg(long, default_value = "timestamp_id")]
    timestamp_col: String,
    /// Column holding the per-row malicious marker
    #[arg(long, default_value = "label")]
    label_col: String,
}

#[derive(Args)]
struct EnrichArgs {
    /// Flattened dataset to enrich
    #[arg(long)]
    input: PathBuf,
    /// Two-column `hash,year` metadata table
    #[arg(long)]
    metadata: PathBuf,
    /// Two-column `timestamp_id,hash` run map
    #[arg(long)]
    run_map: PathBuf,
    /// What to do with samples whose hash has no metadata entry
    #[arg(long, value_parser = ["drop", "keep-unknown"], default_value = "keep-unknown")]
    fallback: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Stream length
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Generate at the full 227x32 telemetry shape
    #[arg(long)]
    paper_shape: bool,
    #[arg(long)]
    infected_fraction: Option<f64>,
    /// Label-flip probability
    #[arg(long)]
    noise: Option<f64>,
    /// Comma-separated instance indices where the malicious concept shifts
    #[arg(long)]
    shifts: Option<String>,
    /// Comma-separated instance indices where a new year rank begins
    #[arg(long)]
    years: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flattened output file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunBatchArgs {
    /// Flattened dataset
    #[arg(long)]
    input: PathBuf,
    /// Pretrain fraction of the random split
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Base learners per forest
    #[arg(long)]
    trees: Option<usize>,
    /// Poisson rate for online bagging
    #[arg(long)]
    lambda: Option<f64>,
    /// Windowed-accuracy window length
    #[arg(long)]
    window: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunOnlineArgs {
    #[arg(long)]
    input: PathBuf,
    /// Last year included in the pretrain segment
    #[arg(long)]
    pivot_year: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScarcityArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    pivot_year: Option<u32>,
    /// Comma-separated labeled fractions to sweep
    #[arg(long)]
    fractions: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// First run directory (containing instances.csv)
    first: PathBuf,
    /// Second run directory
    second: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    /// Optional comparison CSV to write
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => match err.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{err}");
                return 0;
            }
            _ => {
                let rendered = err.render().to_string();
                let mut lines = rendered.lines();
                eprintln!(
                    "ERROR:usage:{}",
                    lines.next().unwrap_or("invalid arguments")
                );
                for line in lines {
                    eprintln!("{line}");
                }
                return 2;
            }
        },
    };

    let settings = match config::Settings::load(cli.config.as_deref()) {
        Ok(settings) => settings,
        Err(err) => {
            eprintln!("ERROR:{}:{}", err.code, err.message);
            return 1;
        }
    };

    let outcome = match cli.command {
        Command::Preprocess(args) => commands::preprocess(&args, &settings, cli.force),
        Command::Enrich(args) => commands::enrich(&args, cli.force),
        Command::Synth(args) => commands::synth(&args, &settings, cli.force),
        Command::RunBatch(args) => commands::run_batch(&args, &settings, cli.force),
        Command::RunOnline(args) => commands::run_online(&args, &settings, cli.force),
        Command::Scarcity(args) => commands::scarcity(&args, &settings, cli.force),
        Command::Report(args) => commands::report(&args, &settings),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("ERROR:{}:{}", err.code, err.message);
            if err.code == "usage" {
                2
            } else {
                1
            }
        }
    }
}
