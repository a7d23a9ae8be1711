//! Command-line front end. Every command reads an [`ExperimentConfig`]
//! (defaults, then `--config FILE`, then `SWITCHMFG_OUT`, then dotted
//! `--key.path=value` overrides) and writes into `out_dir/<command>/` with a
//! `manifest.json`.
//!
//! Exit codes: 0 success, 1 a pass/fail gate or the experiment failed,
//! 2 usage, configuration or input errors.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Outcome;
pub use config::{AgentConfig, CostCheckConfig, ExperimentConfig, Seeds, Thresholds, OUT_ENV};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "switchmfg",
    version,
    about = "Principal-agent switching models: BSDE solver, mean-field equilibrium and convergence experiments",
    after_help = "Any config field can be overridden with --key.path=value, e.g. --mfg.max_fp_iters=10 or --sweep.n_list=[4,8]."
)]
struct Cli {
    /// JSON experiment config; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report format.
    #[arg(long, global = true, value_parser = ["csv", "json"])]
    format: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare the closed-form conjugate cost with a brute-force supremum.
    CostCheck,
    /// Solve the agent's n-player system for fixed contracts and cross-check by simulation.
    SolveAgent {
        #[arg(long)]
        contracts: PathBuf,
    },
    /// Simulate the switching agent under fixed contracts.
    Simulate {
        #[arg(long)]
        contracts: PathBuf,
    },
    /// Search for the mean-field equilibrium contract.
    SolveMfg {
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Distance between the n-player and mean-field value laws as n grows.
    ChaosSweep {
        /// equilibrium.json written by solve-mfg; solved from the config when absent.
        #[arg(long)]
        equilibrium: Option<PathBuf>,
    },
    /// Principal value of the n-player game against the mean-field value.
    ValueConvergence {
        #[arg(long)]
        equilibrium: Option<PathBuf>,
    },
}

/// Splits `--a.b=value` config overrides from the arguments clap sees.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for (i, a) in args.into_iter().enumerate() {
        let dotted = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .filter(|(k, _)| k.contains('.'));
        match dotted {
            Some((k, v)) if i > 0 => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Experiment(_)
        | Error::RankDeficient { .. }
        | Error::GridTooCoarse { .. }
        | Error::AssignmentCap { .. }
        | Error::MemoryCap { .. } => EXIT_FAIL,
        Error::Config(_)
        | Error::LengthMismatch { .. }
        | Error::GridMismatch(_)
        | Error::Io { .. }
        | Error::Json(_) => EXIT_USAGE,
    }
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let (args, mut overrides) = split_overrides(args.into_iter().map(Into::into).collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(f) = &cli.format {
        overrides.push(("format".into(), f.clone()));
    }
    if let Command::SolveMfg { max_iters: Some(m) } = &cli.command {
        overrides.push(("mfg.max_fp_iters".into(), m.to_string()));
    }
    let cfg = match ExperimentConfig::load(
        cli.config.as_deref(),
        &overrides,
        std::env::var(OUT_ENV).ok(),
    ) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let pool = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start the worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::CostCheck => commands::cost_check(&cfg),
        Command::SolveAgent { contracts } => commands::solve_agent(&cfg, contracts),
        Command::Simulate { contracts } => commands::simulate(&cfg, contracts),
        Command::SolveMfg { .. } => commands::solve_mfg(&cfg),
        Command::ChaosSweep { equilibrium } => commands::chaos(&cfg, equilibrium.as_deref()),
        Command::ValueConvergence { equilibrium } => commands::value(&cfg, equilibrium.as_deref()),
    });
    match result {
        Ok(o) if o.failures.is_empty() => EXIT_OK,
        Ok(o) => {
            for f in &o.failures {
                eprintln!("failed: {f}");
            }
            EXIT_FAIL
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
