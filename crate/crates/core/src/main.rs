use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use disync::harness::{self, Algorithm, Format, Scenario};

/// Exit status for a scenario that fails to load or validate.
const EXIT_INVALID: u8 = 2;
/// Exit status when `validate` finds a failing audit check.
const EXIT_AUDIT: u8 = 3;

#[derive(Parser)]
#[command(name = "disync", version, about = "Clock synchronization over switching topologies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write stats plus summary.json.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated algorithm names; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',')]
        algo: Vec<Algorithm>,
        /// Overrides the scenario's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Overrides the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Print the oracle's steady-state bias of a finite-state scenario.
    PredictBias {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Audit the scenario's bounds, connectivity and ergodicity.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<Scenario, ExitCode> {
    Scenario::load(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_INVALID)
    })
}

fn run(cli: Cli) -> Result<(), ExitCode> {
    match cli.command {
        Command::Simulate {
            scenario,
            algo,
            trials,
            seed,
            out,
            format,
        } => {
            let mut s = load(&scenario)?;
            if let Some(seed) = seed {
                s = s.with_seed(seed);
            }
            if let Some(trials) = trials {
                s = s.with_trials(trials);
            }
            let algorithms = if algo.is_empty() { s.algorithms().to_vec() } else { algo };
            if let Err(e) = s.check_algorithms(&algorithms) {
                eprintln!("error: {e}");
                return Err(ExitCode::from(EXIT_INVALID));
            }
            let experiment = harness::run_experiment(&s, &algorithms, s.file.trials, &[]);
            let written = harness::emit_results(&experiment.tables(), &out, format)
                .and_then(|p| harness::write_summary(&harness::summarize(&s, &experiment), &out).map(|q| (p, q)));
            match written {
                Ok((stats, summary)) => {
                    println!("wrote {}", stats.display());
                    println!("wrote {}", summary.display());
                    Ok(())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Err(ExitCode::FAILURE)
                }
            }
        }
        Command::PredictBias { scenario } => {
            let s = load(&scenario)?;
            match harness::predict_bias(&s) {
                Ok(p) => {
                    println!("occupancy: {:?}", p.occupancy);
                    println!("min eigenvalue: {}", p.min_eigenvalue);
                    for (u, b) in p.bias.iter().enumerate() {
                        println!("node {}: {b}", u + 1);
                    }
                    Ok(())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Err(ExitCode::from(EXIT_INVALID))
                }
            }
        }
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            let checks = harness::audit(&s);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(ExitCode::from(EXIT_AUDIT))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
