use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gliderdec::commands::{threads_from_env, CellStatus, GridAxis, SweepOptions};
use gliderdec::config::load_config;
use gliderdec::{cmd_process, cmd_simulate, cmd_sweep, CliError, Method, RunConfig};

/// Ocean current profiles and glider trajectories from glider-mounted ADCP data.
#[derive(Debug, Parser)]
#[command(name = "gliderdec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dive bundle and its truth files from a scenario.
    Simulate {
        /// Scenario file (TOML, or JSON with a .json extension).
        scenario: PathBuf,
        /// Output directory for the bundle.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate current profiles and trajectories for a dive bundle.
    Process {
        /// Bundle directory with adcp.csv, ttw.csv, depth.csv and gps.csv.
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Also write SVG figures.
        #[arg(long)]
        plots: bool,
        /// Method settings (TOML or JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run both methods on one synthetic dive over a grid of settings.
    Sweep {
        scenario: PathBuf,
        /// Axis as key=v1,v2,...; repeat for more axes.
        #[arg(long = "grid", required = true)]
        grid: Vec<GridAxis>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        method: Method,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { scenario, out, seed } => {
            cmd_simulate(&scenario, &out, seed)?;
        }
        Command::Process { bundle, out, method, plots, config } => {
            let file = load_config(config.as_deref())?;
            cmd_process(&bundle, &RunConfig::new(file, out, method, plots))?;
        }
        Command::Sweep { scenario, grid, out, method, config, seed } => {
            let file = load_config(config.as_deref())?;
            let opts = SweepOptions { method, threads: threads_from_env()?, seed };
            let cells = cmd_sweep(&scenario, &file, &grid, &out, &opts)?;
            for (i, c) in cells.iter().enumerate() {
                for (name, m) in [("invert", &c.invert), ("joint", &c.joint)] {
                    if let Some(m) = m.as_ref().filter(|m| m.status != CellStatus::Ok) {
                        eprintln!("cell {i} {name}: {}", m.status.as_str());
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
