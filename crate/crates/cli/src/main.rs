//! `seir-consensus`: simulate ensembles, summarize them into a consensus
//! curve, recover the full state, and reproduce the experiment tables.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Experiment;
use config::{Overrides, RunConfig};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "seir-consensus",
    version,
    about = "Consensus curves for SEIR trajectory ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config; command-line flags override its entries.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Power of the Fréchet mean.
    #[arg(long, global = true)]
    q: Option<f64>,
    /// Number of B-spline basis functions.
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    /// Derivative weight of the H¹ metric.
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Ensemble size.
    #[arg(long = "J", global = true)]
    j: Option<usize>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads for replications (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample and integrate an ensemble; writes trajectory CSVs and ensemble.json.
    Simulate,
    /// Consensus of trajectory CSVs or ensemble manifests.
    Summarize {
        inputs: Vec<PathBuf>,
        /// Use the literature-derived curves instead of input files.
        #[arg(long)]
        literature: bool,
    },
    /// Full (S, E, I, R) state and beta from a solution.json.
    Recover { solution: PathBuf },
    /// Replicated experiment tables with plots.
    Report {
        #[arg(value_enum)]
        experiment: Experiment,
    },
}

fn run(cli: &Cli) -> CliResult<()> {
    let overrides = Overrides {
        seed: cli.seed,
        q: cli.q,
        n_basis: cli.k,
        rho: cli.rho,
        j: cli.j,
        reps: cli.reps,
        threads: cli.threads,
    };
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Simulate => commands::simulate(&config, &cli.out),
        Command::Summarize { inputs, literature } => {
            commands::summarize(&config, inputs, *literature, &cli.out)
        }
        Command::Recover { solution } => commands::recover(&config, solution, &cli.out),
        Command::Report { experiment } => commands::report(&config, *experiment, &cli.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
