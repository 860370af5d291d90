//! Experiment runner: parses a JSON config, dispatches one experiment, and
//! writes results.csv plus manifest.json. Exit codes: 0 success, 2 invalid
//! config, 3 estimator or selftest failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use stathyp::cli::{load_config, run, validate, CliError, EXPERIMENTS};

#[derive(Parser)]
#[command(name = "stathyp", version, about = "Statistical hyperbolicity experiments")]
struct Cli {
    /// Experiment name; must match the config's experiment field.
    experiment: String,
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (defaults to the THREADS environment variable,
    /// then to all cores). Results are identical for any value.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for results.csv and manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Only validate the config; print diagnostics and exit.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if !EXPERIMENTS.contains(&cli.experiment.as_str()) {
        eprintln!(
            "unknown experiment {:?}; valid names: {}",
            cli.experiment,
            EXPERIMENTS.join(", ")
        );
        return ExitCode::from(2);
    }
    let mut cfg = match load_config(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if cfg.experiment != cli.experiment {
        eprintln!(
            "config is for experiment {:?}, but {:?} was requested",
            cfg.experiment, cli.experiment
        );
        return ExitCode::from(2);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let diags = validate(&cfg);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("config error: {d}");
        }
        return ExitCode::from(2);
    }
    if cli.check {
        println!("config ok");
        return ExitCode::SUCCESS;
    }
    let threads = cli.threads.or_else(|| {
        std::env::var("THREADS").ok().and_then(|v| v.parse().ok())
    });
    let result = match threads {
        Some(k) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("could not build thread pool: {e}");
                    return ExitCode::from(3);
                }
            };
            pool.install(|| run(&cfg, &cli.out))
        }
        None => run(&cfg, &cli.out),
    };
    match result {
        Ok(manifest) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "wrote {} and {} ({:.2}s, {} failed samples)",
                cli.out.join("results.csv").display(),
                cli.out.join("manifest.json").display(),
                manifest.duration_seconds,
                manifest.n_failures_total
            );
            ExitCode::SUCCESS
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
