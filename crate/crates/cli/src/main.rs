use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcaccel_cli::commands::{cmd_compare, cmd_density, cmd_design, cmd_validate};
use dcaccel_cli::pipeline::Context;
use dcaccel_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "dcaccel", version, about = "Spectral densities and polynomial filters for consensus on random networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic and Monte-Carlo spectral densities, plus the filtering region.
    Density(Common),
    /// Minimax filters for each configured degree.
    Design(Common),
    /// Rates of the trivial, mean-spectrum, proposed and oracle filters.
    Compare(Common),
    /// Invariant suite.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Recompute cached stages.
    #[arg(long)]
    force: bool,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (Command::Density(c) | Command::Design(c) | Command::Compare(c) | Command::Validate(c)) = &cli.command;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let config = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Command::Validate(_) = cli.command {
        return Ok(cmd_validate(&config)?.iter().all(|c| c.passed));
    }
    let output = config.output_dir(c.output.as_deref());
    let ctx = Context::new(config, output, c.force)?;
    match cli.command {
        Command::Density(_) => {
            cmd_density(&ctx)?;
        }
        Command::Design(_) => {
            cmd_design(&ctx)?;
        }
        Command::Compare(_) => {
            cmd_compare(&ctx)?;
        }
        Command::Validate(_) => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
