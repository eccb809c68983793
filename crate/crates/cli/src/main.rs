//! `vst`: train, run and evaluate saliency transformers from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure (including a failed gradient
//! check), 2 invalid input or configuration, 3 training aborted on a
//! non-finite value.

mod commands;
mod pairing;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "vst", version, about = "Transformer toolkit for salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. `training.total_steps=100`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VAL")]
        overrides: Vec<String>,
        /// Directory for the log, checkpoints and the effective config.
        #[arg(long, default_value = "runs/train")]
        out_dir: PathBuf,
        /// Print progress every N steps.
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Predict saliency and boundary maps for one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score predicted maps against ground-truth masks.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// Write per-image scores and the mean row as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print token grids and the parameter ledger of a config.
    Inspect {
        /// Defaults to the full-size RGB recipe.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VAL")]
        overrides: Vec<String>,
    },
    /// Finite-difference check of every layer and of the toy model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        precision: u32,
        /// Restrict to named components. Repeatable.
        #[arg(long)]
        component: Vec<String>,
        /// Corrupt the backward pass of one op (test hook).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a synthetic shapes dataset with a manifest.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write depth maps.
        #[arg(long)]
        depth: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            overrides,
            out_dir,
            log_every,
        } => commands::train(&config, &overrides, &out_dir, log_every),
        Command::Infer {
            checkpoint,
            input,
            depth,
            out_dir,
        } => commands::infer(&checkpoint, &input, depth.as_deref(), &out_dir),
        Command::Eval { pred_dir, gt_dir, csv } => commands::eval(&pred_dir, &gt_dir, csv.as_deref()),
        Command::Inspect { config, overrides } => commands::inspect(config.as_deref(), &overrides),
        Command::Gradcheck {
            seed,
            precision,
            component,
            inject_fault,
        } => commands::gradcheck(seed, precision, &component, inject_fault.as_deref()),
        Command::Synth {
            out_dir,
            count,
            size,
            seed,
            depth,
        } => commands::synth(&out_dir, count, size, seed, depth),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
