//! `pitch-epv`: the command-line front end of the pass-value engine.

mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pitch-epv", version, about = "Pass expected-possession-value surfaces from tracking data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Likelihood,
    Success,
    #[value(name = "value-s")]
    ValueS,
    #[value(name = "value-u")]
    ValueU,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Md,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic tracking and event fixture.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        matches: usize,
        #[arg(long)]
        out: PathBuf,
        /// Length of each half in seconds.
        #[arg(long, default_value_t = 150.0)]
        period_seconds: f64,
    },
    /// Turn tracking and events into a split, versioned sample set.
    Ingest {
        /// Directory of `*.tracking.jsonl` files.
        #[arg(long)]
        tracking: PathBuf,
        /// Pass events CSV.
        #[arg(long)]
        events: PathBuf,
        /// Goal events CSV; defaults to `goals.csv` beside the events file.
        #[arg(long)]
        goals: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, validation and test shares of the matches.
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        ratios: Vec<f64>,
    },
    /// Train one model, keep the selected epoch and calibrate it.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        data: PathBuf,
        /// `key = value` training config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        max_train: Option<usize>,
        #[arg(long)]
        max_val: Option<usize>,
    },
    /// Search the temperature of a checkpoint on its validation samples.
    Calibrate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where to write the calibrated checkpoint; defaults to `--ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Loss and calibration of a checkpoint on one split.
    Report {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Score a labelled pair file and write the per-pair report.
    Benchmark {
        /// Pair file: JSON, or the long-form CSV layout when it ends in `.csv`.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, required_unless_present = "heuristic")]
        ckpts: Option<PathBuf>,
        /// Use the closed-form heuristic surfaces instead of checkpoints.
        #[arg(long, conflicts_with = "ckpts")]
        heuristic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic labelled pair file with known answers.
    Pairs {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one game state and write its surfaces as JSON.
    Surfaces {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, required_unless_present = "heuristic")]
        ckpts: Option<PathBuf>,
        #[arg(long, conflicts_with = "ckpts")]
        heuristic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Synth, ingest, train all four models and benchmark, at smoke scale.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = commands::dispatch(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
