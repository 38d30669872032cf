use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{Config, ConfigError};

#[derive(Parser)]
#[command(name = "powerctl", version, about = "Mean-field power control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal equilibrium and regime constants -> equilibrium.json
    Equilibrium(Common),
    /// Threshold policy and grid bias check -> threshold.json
    Threshold(Common),
    /// Fluid trajectory -> fluid.csv
    Fluid(Common),
    /// Relative value iteration for N users -> vi.json
    Vi(Common),
    /// Threshold policy vs. optimum over the rho sweep -> compare.csv
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed for randomised starting points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Equilibrium(c) => commands::equilibrium(&Config::load(&c.config)?, &c.out),
        Command::Threshold(c) => commands::threshold(&Config::load(&c.config)?, &c.out, c.seed),
        Command::Fluid(c) => commands::fluid(&Config::load(&c.config)?, &c.out),
        Command::Vi(c) => commands::vi(&Config::load(&c.config)?, &c.out),
        Command::Compare(c) => commands::compare(&Config::load(&c.config)?, &c.out),
    }
}

/// 2 for invalid input, 3 for numerical failure, 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<powerctl::Error>() {
        if e.is_numerical() {
            3
        } else {
            2
        }
    } else if err.downcast_ref::<ConfigError>().is_some() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
