mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Invocation};
use config::{ConfigError, RunConfig};

/// Identifiability, estimation and design studies for NRTL binary VLE models.
#[derive(Debug, Parser)]
#[command(name = "nrtl-ident", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// output directory (overrides `output_dir` in the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// base seed of the replicate streams (overrides `seed` in the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// worker threads; 0 uses all cores
    #[arg(long, global = true, env = "NRTL_IDENT_THREADS")]
    threads: Option<usize>,

    /// run only the scenario with this full label; repeatable
    #[arg(long, global = true)]
    scenario: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// bubble-point curve over a composition grid
    Vle,
    /// parameter estimation on a measured dataset
    Fit,
    /// next optimal experiment(s) for a given design
    Oed,
    /// Monte Carlo estimation studies
    Mc,
    /// sequential design and estimation studies
    Soed,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| ConfigError("missing --config PATH".into()))?;
    let config = RunConfig::load(&path)?;
    let config_dir = path.parent().map(PathBuf::from).unwrap_or_default();
    let out = cli
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("nrtl-ident-out"));
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError(format!("thread pool: {e}")))?;
    }
    let inv = Invocation {
        config,
        config_dir,
        out,
        seed,
        scenarios: cli.scenario,
    };
    match cli.command {
        Command::Vle => commands::vle(&inv),
        Command::Fit => commands::fit(&inv),
        Command::Oed => commands::oed(&inv),
        Command::Mc => commands::mc(&inv),
        Command::Soed => commands::soed(&inv),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("nrtl-ident: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
