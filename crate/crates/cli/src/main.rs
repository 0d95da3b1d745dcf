//! `riskmetric` command line: prices, evaluates, solves and certifies insurance
//! contracts described by a JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "riskmetric", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the JSON result, in addition to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Where to write CSV curves or sweep rows.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Seed for Monte Carlo cross-checks.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Premium of the configured contract and its canonical split.
    Premium {
        /// Also estimate the premium from this many simulated losses.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// RDEU value, premium and certainty equivalent of the configured contract.
    Evaluate,
    /// Optimal contract, as a JSON report and optional CSV curves.
    Solve,
    /// Optimality residual of the configured contract, or of a saved report.
    Verify {
        /// Solve report whose contract is checked instead of the config's.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Brute-force oracle against the solver's answer.
    Oracle,
    /// Stochastic orders between the two configured distortions.
    Orders,
    /// Solves every cell of the configured parameter sweep.
    Sweep,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
