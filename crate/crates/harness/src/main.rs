use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use itelab_core::dgp::{make_null_variant, DgpSpec, Family};
use itelab_harness::{aggregate, exit, oracle, run, ExperimentConfig, Profile};

#[derive(Parser)]
#[command(name = "itelab", version, about = "Simulation study of ITE estimators on censored survival data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replication of a configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Summarise results.csv per (family, dgp, estimator, variant).
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print analytic and Monte-Carlo theta at the frozen probe rows.
    TruthOracle {
        #[arg(long)]
        family: String,
        #[arg(long)]
        dgp: u8,
        #[arg(long, default_value_t = 1_000_000)]
        nmc: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        null: bool,
    },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run {
            config,
            profile,
            workers,
        } => run_cmd(&config, profile, workers),
        Command::Aggregate { input, out } => match aggregate(&input, &out) {
            Ok(rows) => {
                println!("wrote {} groups to {}", rows.len(), out.display());
                exit::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit::CONFIG
            }
        },
        Command::TruthOracle {
            family,
            dgp,
            nmc,
            seed,
            null,
        } => oracle_cmd(&family, dgp, nmc, seed, null),
    };
    ExitCode::from(code as u8)
}

fn run_cmd(path: &std::path::Path, profile: Profile, workers: usize) -> i32 {
    let config = match ExperimentConfig::load(path, profile) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return exit::CONFIG;
        }
    };
    match run(&config, workers) {
        Ok(summary) if summary.all_failed() => {
            eprintln!("all {} replications failed", summary.failures.len());
            exit::ALL_FAILED
        }
        Ok(summary) => {
            println!(
                "wrote {} rows to {} ({} failed)",
                summary.scored.len(),
                summary.results_path.display(),
                summary.failures.len()
            );
            exit::SUCCESS
        }
        Err(e @ itelab_harness::RunError::Unwritable { .. }) => {
            eprintln!("error: {e}");
            exit::CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit::RUNTIME
        }
    }
}

fn oracle_cmd(family: &str, dgp: u8, nmc: usize, seed: u64, null: bool) -> i32 {
    let spec = match family.parse::<Family>().and_then(|f| DgpSpec::new(f, dgp, 1, 0)) {
        Ok(s) if null => make_null_variant(&s),
        Ok(s) => s,
        Err(e) => {
            eprintln!("usage error: {e}");
            return exit::CONFIG;
        }
    };
    match oracle::oracle_table(&spec, oracle::CLI_PROBES, nmc, seed) {
        Ok(rows) => {
            print!("{}", oracle::format_table(&spec, &rows));
            exit::SUCCESS
        }
        Err(e) => {
            eprintln!("usage error: {e}");
            exit::CONFIG
        }
    }
}
