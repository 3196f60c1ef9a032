//! `uqscale` CLI: run experiment configs and refit curve files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uqscale::harness::{self, ExperimentKind};

#[derive(Parser)]
#[command(name = "uqscale", version, about = "Uncertainty scaling-law laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write curves.csv / fits.json / report.svg.
    Run {
        /// TOML experiment configuration.
        config: PathBuf,
        /// Output directory (overrides the config's output_dir; default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted-key config overrides, e.g. --set lla.mc_samples=500.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Use the full 12-point 10²..10⁶ grid (the large-scale protocol).
        #[arg(long = "full-grid")]
        full_grid: bool,
    },
    /// Recompute fits from an existing curves.csv and print the fit table.
    Report {
        /// Path to a curves.csv produced by `run`.
        curves: PathBuf,
        /// Directory for fits.json (default: next to the curves file).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Drop points with N below this value and also report trimmed fits.
        #[arg(long = "n-min")]
        n_min: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, set, full_grid } => run(config, out, seed, set, full_grid),
        Command::Report { curves, out, n_min } => {
            harness::report(&curves, out.as_deref(), n_min).map(|table| {
                print!("{table}");
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(
    config_path: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    set: Vec<String>,
    full_grid: bool,
) -> Result<(), harness::HarnessError> {
    let mut cfg = harness::load_config(&config_path, &set)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if full_grid {
        if cfg.experiment != ExperimentKind::HmcTwomoons {
            return Err(harness::HarnessError::Config {
                field: "--full-grid".into(),
                message: "only meaningful for the hmc_twomoons experiment".into(),
            });
        }
        cfg.n_grid = harness::ExperimentConfig::full_n_grid();
    }
    let out_dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let record = harness::run_experiment(&cfg, &out_dir)?;
    println!(
        "{}: {} rows in {:.1}s (seed {}, config {})",
        record.experiment,
        record.n_rows,
        record.wall_clock_s,
        record.seed,
        &record.config_hash[..12]
    );
    println!("artifacts: {}", out_dir.display());
    print!("{}", harness::render_fit_table(&record.fits));
    Ok(())
}
