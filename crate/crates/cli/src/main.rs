//! `dinr`: experiment driver for dynamical implicit neural representations.
//!
//! Exit status is 0 on success, 1 for configuration or input errors and 2
//! when training diverges.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::LoadedConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "dinr", version, about = "Train and analyse static and dynamical coordinate networks")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true, env = "DINR_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,

    /// Overrides the model, training and data seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured signal as a raw grid plus a dataset CSV.
    GenData(ConfigArgs),
    /// Train the configured model.
    Train(ConfigArgs),
    /// Score checkpoints and emit reconstructions, error maps and spectra.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Empirical NTK spectra of checkpoints, or of an initial static/dynamical pair.
    Ntk {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Noise and sparsity sweeps with and without the kinetic-energy penalty.
    Ablate(ConfigArgs),
    /// Evaluate the Rademacher bounds for a TOML file of constants.
    Bounds {
        #[arg(long)]
        inputs: PathBuf,
    },
}

fn output_dir(cli_out: Option<&Path>, cfg: Option<&LoadedConfig>) -> Result<PathBuf> {
    let dir = match (cli_out, cfg.and_then(|c| c.config.output_dir.as_ref())) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) if p.is_absolute() => p.clone(),
        (None, Some(p)) => cfg.map(|c| c.base_dir.join(p)).unwrap_or_else(|| p.clone()),
        (None, None) => PathBuf::from("dinr-out"),
    };
    commands::prepare_dir(&dir)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let load = |a: &ConfigArgs| LoadedConfig::from_path(&a.config, a.seed);
    let manifest = match &cli.command {
        Command::GenData(a) => {
            let cfg = load(a)?;
            commands::gen_data(&cfg, &output_dir(cli.out.as_deref(), Some(&cfg))?)?
        }
        Command::Train(a) => {
            let cfg = load(a)?;
            commands::train(&cfg, &output_dir(cli.out.as_deref(), Some(&cfg))?)?
        }
        Command::Eval { cfg, checkpoints } => {
            let cfg = load(cfg)?;
            commands::eval(&cfg, checkpoints, &output_dir(cli.out.as_deref(), Some(&cfg))?)?
        }
        Command::Ntk { cfg, checkpoints } => {
            let cfg = load(cfg)?;
            commands::ntk(&cfg, checkpoints, &output_dir(cli.out.as_deref(), Some(&cfg))?)?
        }
        Command::Ablate(a) => {
            let cfg = load(a)?;
            commands::ablate(&cfg, &output_dir(cli.out.as_deref(), Some(&cfg))?)?
        }
        Command::Bounds { inputs } => {
            commands::bounds(inputs, &output_dir(cli.out.as_deref(), None)?)?;
            return Ok(());
        }
    };
    log::info!("{} finished: {} artifacts, config {}", manifest.command, manifest.artifacts.len(), manifest.config_hash);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
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
