use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ehsense_cli::{
    cmd_export_regions, cmd_search, cmd_simulate, cmd_solve, cmd_verify, CliError, ExperimentConfig, Options,
};

/// Solve, simulate and verify energy-harvesting channel-sensing policies.
#[derive(Debug, Parser)]
#[command(name = "ehsense", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Simulation seed; overrides `[simulation] seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Print errors only.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Value iteration: value table, policy regions and thresholds.
    Solve,
    /// Monte Carlo throughput of the configured policies.
    Simulate,
    /// Threshold search on simulated throughput.
    Search,
    /// Oracle agreement and structural checks.
    Verify,
    /// Policy regions of every sweep point in one CSV.
    ExportRegions,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config PATH is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.simulation.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    let opts = Options {
        out: config.output.dir.clone(),
        quiet: cli.quiet,
    };
    let files = match cli.command {
        Command::Solve => cmd_solve(&config, &opts),
        Command::Simulate => cmd_simulate(&config, &opts),
        Command::Search => cmd_search(&config, &opts),
        Command::Verify => cmd_verify(&config, &opts),
        Command::ExportRegions => cmd_export_regions(&config, &opts),
    }?;
    if !cli.quiet {
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
