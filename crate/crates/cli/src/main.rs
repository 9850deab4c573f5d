//! Command-line workflows: synthetic latency data, predictor training,
//! search runs and run comparison.

mod compare;
mod latency;
mod search;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparsity_search::SpaceSpec;

#[derive(Parser)]
#[command(name = "sparsity-search", version, about = "Latency-constrained layer-wise sparsity search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample random configurations and time them with the synthetic cost model.
    GenLatency {
        /// Search space as `layers,heads,ffn_dim,ffn_steps`.
        #[arg(long, default_value = "4,4,1024,100", value_parser = parse_spec)]
        spec: SpaceSpec,
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Standard deviation of the measurement noise in microseconds.
        #[arg(long, default_value_t = 20.0)]
        noise_sigma: f64,
    },
    /// Fit the latency predictor and report validation error.
    TrainLatency {
        #[arg(long)]
        samples: PathBuf,
        /// Fraction of rows used for training.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "4,4,1024,100", value_parser = parse_spec)]
        spec: SpaceSpec,
    },
    /// Run a search described by a TOML run configuration.
    Search {
        #[arg(long)]
        config: PathBuf,
    },
    /// Align population reward statistics of several reports.
    Compare {
        #[arg(num_args = 2.., required = true)]
        reports: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint spacing in iterations.
        #[arg(long, default_value_t = 50)]
        every: usize,
    },
}

fn parse_spec(text: &str) -> Result<SpaceSpec, String> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [l, h, f, s] = parts[..] else {
        return Err(format!("expected layers,heads,ffn_dim,ffn_steps, got `{text}`"));
    };
    SpaceSpec::new(l, h, f, s).map_err(|e| e.to_string())
}

/// Process exit statuses.
pub(crate) const EXIT_ERROR: u8 = 1;
pub(crate) const EXIT_INFEASIBLE: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenLatency { spec, count, seed, out, noise_sigma } => {
            latency::generate(&spec, count, seed, noise_sigma, &out).map(|_| ExitCode::SUCCESS)
        }
        Command::TrainLatency { samples, split, seed, out, spec } => {
            latency::train(&spec, &samples, split, seed, &out).map(|_| ExitCode::SUCCESS)
        }
        Command::Search { config } => search::run(&config),
        Command::Compare { reports, out, every } => compare::run(&reports, out.as_deref(), every).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_ERROR)
    })
}
