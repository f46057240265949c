use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracpat_cli::{cmd_eig, cmd_forward, cmd_oed, cmd_reconstruct, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fracpat", version, about = "Photoacoustic reconstruction and illumination design in fractionally damped media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise seed, overrides `noise.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overrides `io.outdir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the phantom and write clean and noisy traces.
    Forward(Common),
    /// Compute the MAP estimate.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Observation CSV from `forward`; synthesized when omitted.
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// Optimize the intensity design.
    Oed {
        #[command(flatten)]
        common: Common,
        /// Reuse a Gram tensor written by an earlier run.
        #[arg(long)]
        gram: Option<PathBuf>,
    },
    /// Export the prior eigenvalues.
    Eig(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.noise.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.io.outdir = o.clone();
    }
    let out = cfg.io.outdir.clone();
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<String, CliError> {
    let to_json = |v: serde_json::Result<String>| v.map_err(|e| CliError::Config(e.to_string()));
    match cli.command {
        Command::Forward(c) => {
            let (cfg, out) = load(&c)?;
            to_json(serde_json::to_string(&cmd_forward(&cfg, &out)?))
        }
        Command::Reconstruct { common, obs } => {
            let (cfg, out) = load(&common)?;
            to_json(serde_json::to_string(&cmd_reconstruct(&cfg, &out, obs.as_deref())?))
        }
        Command::Oed { common, gram } => {
            let (cfg, out) = load(&common)?;
            to_json(serde_json::to_string(&cmd_oed(&cfg, &out, gram.as_deref())?))
        }
        Command::Eig(c) => {
            let (cfg, out) = load(&c)?;
            to_json(serde_json::to_string(&cmd_eig(&cfg, &out)?))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fracpat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
