use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gthmc_bench::config::ExperimentConfig;
use gthmc_bench::experiment::run_experiment;
use gthmc_bench::trace::plot_trace;
use gthmc_bench::trajectories::run_trajectories;
use gthmc_bench::{BenchError, Result};

/// Benchmarks for geometrically tempered HMC.
#[derive(Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune, sample and diagnose every grid cell; writes results.csv and chains.
    Run { config: PathBuf },
    /// Integrate fixed-energy trajectories; writes trajectory CSVs and an SVG.
    Trajectories { config: PathBuf },
    /// Trace plot of one coordinate (1-based) of a chain file.
    Trace {
        chain_file: PathBuf,
        #[arg(long)]
        coord: usize,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_experiment(&cfg)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for r in &out.rows {
                println!(
                    "{:<6} T={:<5} gamma={:<5} delta={:<4} {:<16} ess/100={:<10.4} ess/budget={:<10.4} grads={}",
                    r.kernel,
                    r.temperature,
                    r.gamma.map_or("-".into(), |g| g.to_string()),
                    r.delta,
                    r.statistic,
                    r.min_ess_per_100,
                    r.min_ess_per_budget,
                    r.grad_evals
                );
            }
            println!("wrote {}", out.results.display());
        }
        Command::Trajectories { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_trajectories(&cfg)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for set in &out.sets {
                let crossed = set.trajectories.iter().filter(|t| t.crossed == Some(true)).count();
                println!("{}: {} trajectories, {} cross the midline", set.label, set.trajectories.len(), crossed);
            }
            println!("wrote {} and {} trajectory files", out.svg.display(), out.csvs.len());
        }
        Command::Trace { chain_file, coord } => {
            if coord == 0 {
                return Err(BenchError::Config("--coord is 1-based".into()));
            }
            let out = plot_trace(&chain_file, coord)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
