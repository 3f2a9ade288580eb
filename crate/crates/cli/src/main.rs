//! `neuromod` — experiment runner for context-gated sparse low-rank
//! adapters.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (bad config values,
//! missing files, incompatible checkpoints), 2 on a usage error.

use clap::{Args, Parser, Subcommand};
use neuromod_core::merging::{MergeMethod, MergeRecipe};
use neuromod_core::runner::{self, RunConfig, Sweep};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "neuromod", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Path to a JSON run config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config file and the NEUROMOD_SEED
    /// environment variable.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports and checkpoints.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Suppress progress output on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one adapter on a single contextual-regression task.
    Train(CommonArgs),
    /// Merge trained checkpoints without further training.
    Merge {
        /// Checkpoint files to merge (at least 2).
        #[arg(required = true, num_args = 2..)]
        checkpoints: Vec<PathBuf>,
        /// Merge method: task_arithmetic or ties.
        #[arg(long, default_value = "task_arithmetic")]
        method: String,
        /// Scaling applied to the combined delta.
        #[arg(long)]
        scaling: Option<f64>,
        /// Fraction of delta entries kept per column by TIES trimming.
        #[arg(long, default_value_t = 0.5)]
        trim_fraction: f64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Train sequentially over a task family and report backward transfer.
    Continual(CommonArgs),
    /// Run an ablation sweep (gate, lambda, k, or dh) across seeds.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Which grid to sweep: gate, lambda, k, or dh.
        #[arg(long)]
        sweep: String,
        /// Number of seed replicates per cell.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Re-evaluate a checkpoint on its stored task.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Print a summary of a checkpoint's shape and provenance.
    Inspect {
        checkpoint: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
}

/// Seed precedence: --seed flag, then NEUROMOD_SEED, then the config file.
fn resolve_config(common: &CommonArgs) -> Result<RunConfig, neuromod_core::Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let env_seed = match std::env::var("NEUROMOD_SEED") {
        Ok(s) => Some(s.parse::<u64>().map_err(|_| {
            neuromod_core::Error::InvalidParameter(format!(
                "NEUROMOD_SEED must be a non-negative integer, got '{s}'"
            ))
        })?),
        Err(_) => None,
    };
    if let Some(seed) = common.seed.or(env_seed) {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(quiet: bool, line: &str) {
    if !quiet {
        println!("{line}");
    }
}

fn run(cli: Cli) -> Result<(), neuromod_core::Error> {
    match cli.command {
        Command::Train(common) => {
            let cfg = resolve_config(&common)?;
            let outcome = runner::run_train(&cfg, &common.out_dir)?;
            for m in &outcome.metrics {
                emit(common.quiet, &serde_json::to_string(m)?);
            }
            emit(
                common.quiet,
                &format!("checkpoint written to {}", outcome.checkpoint_path.display()),
            );
        }
        Command::Merge {
            checkpoints,
            method,
            scaling,
            trim_fraction,
            out_dir,
            quiet,
        } => {
            let method: MergeMethod = method.parse()?;
            let recipe = MergeRecipe {
                method,
                // Task arithmetic defaults to the 1/T mean; TIES already
                // averages over contributing deltas.
                scaling: scaling.unwrap_or(match method {
                    MergeMethod::TaskArithmetic => 1.0 / checkpoints.len() as f64,
                    MergeMethod::Ties => 1.0,
                }),
                trim_fraction,
            };
            let report = runner::run_merge(&checkpoints, &recipe, &out_dir)?;
            emit(quiet, &serde_json::to_string_pretty(&report)?);
        }
        Command::Continual(common) => {
            let cfg = resolve_config(&common)?;
            let report = runner::run_continual(&cfg, &common.out_dir)?;
            emit(
                common.quiet,
                &format!(
                    "trained {} tasks, BWT = {}",
                    report.matrix.tasks,
                    report
                        .bwt
                        .map(|b| format!("{b:.6}"))
                        .unwrap_or_else(|| "n/a".into())
                ),
            );
        }
        Command::Ablate { common, sweep, seeds } => {
            let cfg = resolve_config(&common)?;
            let sweep: Sweep = sweep.parse()?;
            let report = runner::run_ablate(&cfg, sweep, seeds, &common.out_dir)?;
            emit(
                common.quiet,
                &std::fs::read_to_string(common.out_dir.join("ablate_table.txt"))?,
            );
            drop(report);
        }
        Command::Eval { checkpoint, quiet } => {
            let report = runner::run_eval(&checkpoint)?;
            emit(quiet, &serde_json::to_string_pretty(&report)?);
        }
        Command::Inspect { checkpoint, quiet } => {
            let report = runner::run_inspect(&checkpoint)?;
            emit(quiet, &serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors by itself.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Bad parameter values, malformed config/JSON, and
            // incompatible checkpoints are usage errors (2); everything
            // else is a runtime failure (1).
            match e {
                neuromod_core::Error::InvalidParameter(_)
                | neuromod_core::Error::Incompatible(_)
                | neuromod_core::Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
