//! `echotherm` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 partial results (some chains failed).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, Status};
use config::{ConfigError, RunConfig, PRESETS};

#[derive(Parser)]
#[command(name = "echotherm", version, about = "Thermal observables from short-time Loschmidt echoes")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides output.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides sampler.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Temperature sweep with exact echoes.
    Run(Source),
    /// Exact-diagonalization reference curves.
    Oracle(Source),
    /// Echo and work distribution of diagnostic states.
    Echo {
        #[command(flatten)]
        source: Source,
        /// Extra configurations as bit strings, site 0 first.
        #[arg(long = "state")]
        states: Vec<String>,
    },
    /// Temperature sweep with echoes from the simulated Ramsey protocol.
    Protocol(Source),
    /// List built-in presets.
    Presets,
}

impl Source {
    fn load(&self) -> Result<RunConfig, ConfigError> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => unreachable!("clap requires one of --config and --preset"),
        };
        if let Some(seed) = self.seed {
            config.sampler.seed = seed;
        }
        Ok(config)
    }
}

fn execute(cli: Cli) -> Result<Status, CliError> {
    let (source, name) = match &cli.command {
        Command::Presets => {
            for (name, text) in PRESETS {
                let about = text.lines().next().unwrap_or("").trim_start_matches("# ");
                println!("{name:<16} {about}");
            }
            return Ok(Status::Complete);
        }
        Command::Run(s) => (s, "run"),
        Command::Oracle(s) => (s, "oracle"),
        Command::Echo { source, .. } => (source, "echo"),
        Command::Protocol(s) => (s, "protocol"),
    };
    let config = source.load()?;
    for warning in config.warnings() {
        log::warn!("{warning}");
    }
    let out = commands::output_dir(&config, source.out.clone());
    let start = Instant::now();
    let status = match &cli.command {
        Command::Run(_) => commands::cmd_run(&config, &out)?,
        Command::Oracle(_) => commands::cmd_oracle(&config, &out)?,
        Command::Echo { states, .. } => commands::cmd_echo(&config, states, &out)?,
        Command::Protocol(_) => commands::cmd_protocol(&config, &out)?,
        Command::Presets => unreachable!(),
    };
    // Wall time lives apart from the reproducible outputs.
    let timing = serde_json::json!({
        "command": name,
        "wall_seconds": start.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
    });
    std::fs::write(out.join("timing.json"), format!("{timing:#}\n"))?;
    log::info!("wrote {}", out.display());
    Ok(status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial) => {
            eprintln!("warning: some chains failed; results are partial");
            ExitCode::from(3)
        }
        Err(CliError::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
