use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relaxstab_cli::config::parse_mu_list;
use relaxstab_cli::{run_command, CliError, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "relaxstab", version, about = "Stability of tailored relaxation dynamics under banded perturbations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed from which every artifact seed is derived.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Matrix dimension N.
    #[arg(long, global = true)]
    dimension: Option<usize>,
    /// Comma-separated band widths, e.g. `0.1,0.5,1,2`.
    #[arg(long, global = true)]
    mu: Option<String>,
    /// Target name, or a comma-separated list of names.
    #[arg(long, global = true)]
    target: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build models, perturbation descriptors and the σ calibration table.
    Build,
    /// Evolve unperturbed and perturbed dynamics and fidelities.
    Evolve,
    /// Extract memory kernels from the measured dynamics.
    Kernel,
    /// Fit α at the widest band, then β per cell.
    Fit,
    /// Apply the heuristic to recurrence dynamics.
    Recurrence,
    /// Aggregate a completed run into report.json.
    Report,
    /// All of the above in order.
    Sweep,
    /// Tailoring and semicircle statistics across the configured dimensions.
    Nsweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Evolve => "evolve",
            Command::Kernel => "kernel",
            Command::Fit => "fit",
            Command::Recurrence => "recurrence",
            Command::Report => "report",
            Command::Sweep => "sweep",
            Command::Nsweep => "nsweep",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply(Overrides {
        output: cli.out,
        master_seed: cli.seed,
        workers: cli.workers,
        dimension: cli.dimension,
        mu_list: cli.mu.as_deref().map(parse_mu_list).transpose().map_err(CliError::Config)?,
        target: cli.target,
    })?;
    let manifest = run_command(config, cli.command.name())?;
    log::info!("{} artifacts recorded in {}", manifest.artifacts.len(), manifest.config.output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are validation failures.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
