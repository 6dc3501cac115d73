//! `datactl`: sample benchmark systems, estimate local Lipschitz constants,
//! and test ε-controllability from data.

mod artifacts;
mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::*;

/// Bad flags, config or arguments; exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "datactl", version, about = "Epsilon-controllability testing from sampled transitions")]
struct Cli {
    /// Experiment config (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where outputs go (default `out`, or the config's `output_dir`).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a dataset from a benchmark system.
    Sample(SampleArgs),
    /// Estimate per-sample Lipschitz constants; writes lipschitz.csv.
    EstimateLipschitz(EstimateArgs),
    /// Run the ball-tree search; writes balls.csv, controllable.csv, run.meta.json.
    Mecs(MecsArgs),
    /// Run the fixed-radius graph test; writes controllable.csv, run.meta.json.
    Ferf(FerfArgs),
    /// DOC over a list of ε; writes sweep.csv.
    DocSweep(SweepArgs),
    /// DOC over a grid of targets; writes heatmap.csv.
    DocMap(MapArgs),
    /// Replay control paths through the true system; writes verify.csv.
    Verify(VerifyArgs),
    /// Full pipeline from --config; writes manifest.json.
    Run,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<datactl_core::Error>() {
            return if core.is_internal() { 3 } else { 2 };
        }
    }
    2
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(format!("--threads: {e}")))?;
    }
    let config = cli.config.as_deref().map(config::ExperimentConfig::load).transpose()?;
    let g = Globals {
        config,
        seed: cli.seed,
        output_dir: cli.output_dir,
    };
    match &cli.command {
        Command::Sample(a) => sample(&g, a),
        Command::EstimateLipschitz(a) => estimate(&g, a),
        Command::Mecs(a) => mecs(&g, a),
        Command::Ferf(a) => ferf(&g, a),
        Command::DocSweep(a) => doc_sweep(&g, a),
        Command::DocMap(a) => doc_map(&g, a),
        Command::Verify(a) => verify(&g, a),
        Command::Run => {
            let cfg = g
                .config
                .as_ref()
                .ok_or_else(|| UsageError("`run` needs --config".into()))?;
            let out = g.output_dir()?;
            let m = pipeline::run_experiment(cfg, g.seed(), &out)?;
            println!("run complete: {} files listed in {}", m.files.len(), out.join(pipeline::MANIFEST).display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
