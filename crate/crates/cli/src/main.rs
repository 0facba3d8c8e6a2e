//! `roughlab`: run the numerical experiments and write CSV rows plus a
//! pass/flag/fail summary per experiment.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use roughlab_core::experiments::{run, Experiment, ExperimentConfig, Status};

#[derive(Parser, Debug)]
#[command(name = "roughlab", version, about = "Rough fractional singular integrals on homogeneous groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config; keys override the experiment defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for `<experiment>.csv` and `<experiment>_summary.json`.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Group-law axioms on the built-in groups.
    GroupCheck,
    /// Polar measure, truncation norms and the Riesz oracle.
    Sphere,
    /// L² decay of the Littlewood–Paley pieces in |j − k|.
    Decay,
    /// Hörmander integrals of the regrouped kernels.
    Hormander,
    /// Unweighted Sobolev ratios of the maximal operator.
    Unweighted,
    /// Power-weight sweep of the maximal operator.
    Weighted,
    /// Sparse domination, its constants and the CZ batch.
    Sparse,
    /// Every experiment in turn.
    All,
}

impl Command {
    fn experiments(self) -> Vec<Experiment> {
        match self {
            Self::GroupCheck => vec![Experiment::GroupCheck],
            Self::Sphere => vec![Experiment::Sphere],
            Self::Decay => vec![Experiment::Decay],
            Self::Hormander => vec![Experiment::Hormander],
            Self::Unweighted => vec![Experiment::Unweighted],
            Self::Weighted => vec![Experiment::Weighted],
            Self::Sparse => vec![Experiment::Sparse],
            Self::All => Experiment::ALL.to_vec(),
        }
    }
}

fn config_for(cli: &Cli, e: Experiment) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml_for(e, &text).with_context(|| format!("config {}", path.display()))?
        }
        None => ExperimentConfig::defaults(e),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every check passed or was only flagged.
fn execute(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut ok = true;
    for e in cli.command.experiments() {
        let cfg = config_for(cli, e)?;
        let start = Instant::now();
        log::info!("running {e}");
        let out = run(&cfg).with_context(|| format!("experiment {e}"))?;
        out.write(&cli.out, e, &cfg).with_context(|| format!("writing results to {}", cli.out.display()))?;
        for c in &out.checks {
            println!("{:<4} {e}: {} ({})", c.status, c.criterion, c.detail);
        }
        log::info!("{e}: {} rows in {:.1} s", out.rows.len(), start.elapsed().as_secs_f64());
        ok &= out.checks.iter().all(|c| c.status != Status::Fail);
    }
    Ok(ok)
}
