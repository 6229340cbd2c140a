use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use feds::commands::{self, Overrides};
use feds::core::trainer::Mode;

/// Post-tune a sequence recognizer with a filtered, learned edit-distance
/// surrogate.
#[derive(Debug, Parser)]
#[command(name = "feds", version)]
struct Cli {
    /// TOML configuration; missing keys use the desk defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic corpus into train/val/test splits.
    GenData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a recognizer with cross-entropy.
    TrainBaseline {
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-tune a pre-trained recognizer.
    Tune {
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Pre-trained recognizer checkpoint.
        #[arg(long)]
        recognizer: PathBuf,
        /// feds, lsed or baseline.
        #[arg(long)]
        mode: Option<Mode>,
        /// Gate threshold.
        #[arg(long)]
        lambda: Option<f64>,
        /// Number of surrogate/recognizer alternations.
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, NED and TED of a recognizer on one split.
    Evaluate {
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        recognizer: PathBuf,
        /// Reference checkpoint for the relative TED improvement.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export true versus surrogate edit distance from a tuning log.
    Scatter {
        /// log.csv written by tune.
        #[arg(long)]
        log: PathBuf,
        /// First epoch (default: first logged epoch).
        #[arg(long)]
        from: Option<usize>,
        /// Last epoch (default: last logged epoch).
        #[arg(long)]
        to: Option<usize>,
        /// Band half-width (default: the configured gate threshold).
        #[arg(long)]
        lambda: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides = Overrides {
        seed: cli.seed,
        ..Overrides::default()
    };
    if let Command::Tune { mode, lambda, epochs, .. } = &cli.command {
        overrides.mode = *mode;
        overrides.lambda = *lambda;
        overrides.epochs = *epochs;
    }
    if let Command::Scatter { lambda, .. } = &cli.command {
        overrides.lambda = *lambda;
    }
    let cfg = commands::resolve_config(cli.config.as_deref(), &overrides).context("loading configuration")?;
    match cli.command {
        Command::GenData { out } => commands::gen_data(&cfg, &out)?,
        Command::TrainBaseline { data, out } => {
            commands::train_baseline_cmd(&cfg, &data, &out)?;
        }
        Command::Tune { data, recognizer, out, .. } => commands::tune_cmd(&cfg, &data, &recognizer, &out)?,
        Command::Evaluate {
            data,
            recognizer,
            baseline,
            split,
            out,
        } => {
            let text = commands::evaluate_cmd(&cfg, &recognizer, baseline.as_deref(), &data, &split, &out)?;
            print!("{text}");
        }
        Command::Scatter { log, from, to, out, .. } => {
            let s = commands::scatter_cmd(&log, from, to, cfg.tune.lambda, &out)?;
            if let Some(f) = s.in_band_fraction() {
                println!("rows: {}\nin_band_fraction: {f:.6}", s.rows.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
