use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod report;
mod svg;

use config::{RunConfig, Settings};

/// Train, profile, index and simulate a runtime-adaptive elastic network.
#[derive(Parser, Debug)]
#[command(name = "adascale", version)]
struct Cli {
    /// Run configuration (`[section]` headers, `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data, weights and traces; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.mode=conditional_update`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Staged pretraining; writes the checkpoint and a per-stage CSV.
    Train {
        /// Continue after the last completed stage checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Intrinsic metrics and predicted latency/energy for every variant.
    Profile,
    /// Evaluate every variant and persist the indexed performance tables.
    BuildIndex,
    /// Replay a load trace through the adaptation loop.
    Simulate,
    /// Summarize the CSVs in the output directory as markdown.
    Report,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Violation(String),
    #[error(transparent)]
    Core(#[from] adascale::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(adascale::Error::Config { .. }) => 2,
            _ => 1,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let (mut settings, base) = match &cli.config {
        Some(path) => {
            let base = path.parent().map(PathBuf::from).unwrap_or_default();
            (Settings::from_file(path)?, base)
        }
        None => (Settings::empty(), PathBuf::from(".")),
    };
    for s in &cli.set {
        settings.set(s)?;
    }
    RunConfig::resolve(&settings, &base, cli.seed, cli.out.clone())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train { resume } => commands::train(&cfg, *resume),
        Command::Profile => commands::profile(&cfg),
        Command::BuildIndex => commands::build_index(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Report => report::report(&cfg.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adascale: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
