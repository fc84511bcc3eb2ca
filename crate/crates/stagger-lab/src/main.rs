//! Command-line front end: train a single run, execute a sweep, or
//! re-aggregate an existing sweep directory.
//!
//! All validation happens before any file is created; a bad config exits
//! nonzero without touching the filesystem.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stagger_lab::config::{load_config, RunConfig};
use stagger_lab::runner::{report, run_experiment, run_sweep, write_run_outputs, write_sweep_outputs, SweepKind};
use stagger_lab::stagger::Mode;

#[derive(Parser)]
#[command(name = "stagger-lab", version, about = "Staggered-reset PPO experiments on the chain environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a JSON run config; omitted means built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics/occupancy/forgetting/resets CSVs.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Override the config's reset schedule mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Worker count; training itself is single-threaded, so any value
        /// yields identical output (1 is the strict-determinism setting).
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Also write the trained network to params.bin.
        #[arg(long)]
        save_params: bool,
    },
    /// Run one of the built-in grids over both modes and paired seeds.
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        /// Which grid: horizon | homogeneity | gating | granularity.
        #[arg(long)]
        kind: SweepKind,
        /// Seeds per grid point and mode.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Worker threads for independent sweep runs.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Recompute aggregate.csv from an existing summary.csv.
    Report {
        /// Sweep directory containing summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(common: &ConfigArgs) -> Result<RunConfig, String> {
    let mut config = match &common.config {
        Some(path) => load_config(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = Some(out.clone());
    }
    Ok(config)
}

fn default_dir(stem: String) -> PathBuf {
    PathBuf::from("runs").join(stem)
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Train { common, mode, threads: _, save_params } => {
            let mut config = resolve_config(&common)?;
            if let Some(mode) = mode {
                config.schedule.mode = mode;
            }
            config.validate().map_err(|e| e.to_string())?;
            let dir = config
                .output_dir
                .clone()
                .unwrap_or_else(|| default_dir(format!("train-{}-seed{}", config.schedule.mode, config.seed)));
            let trained = run_experiment(&config).map_err(|e| e.to_string())?;
            write_run_outputs(&dir, &config, &trained, save_params).map_err(|e| e.to_string())?;
            let result = &trained.result;
            println!(
                "trained {} updates -> {} (final_success {}, mean_forgetting {}, peak_value_mse {})",
                result.ledger.rows.len(),
                dir.display(),
                result.final_success,
                result.mean_forgetting,
                result.peak_value_mse
            );
            Ok(())
        }
        Command::Sweep { common, kind, seeds, threads } => {
            if seeds == 0 {
                return Err("--seeds must be at least 1".into());
            }
            if threads == 0 {
                return Err("--threads must be at least 1".into());
            }
            let config = resolve_config(&common)?;
            config.validate().map_err(|e| e.to_string())?;
            let dir = config.output_dir.clone().unwrap_or_else(|| default_dir(format!("sweep-{kind}")));
            let outcome = run_sweep(kind, &config, seeds, threads);
            write_sweep_outputs(&dir, &config, &outcome).map_err(|e| e.to_string())?;
            println!(
                "swept {kind}: {} runs ok, {} failed -> {}",
                outcome.rows.len(),
                outcome.failures.len(),
                dir.display()
            );
            if !outcome.failures.is_empty() {
                return Err(format!("{} runs failed; see failures.csv", outcome.failures.len()));
            }
            Ok(())
        }
        Command::Report { out } => {
            let rows = report(&out).map_err(|e| e.to_string())?;
            println!("aggregated {} (sweep point, mode) groups -> {}", rows.len(), out.join("aggregate.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
