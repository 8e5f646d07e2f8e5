use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rcan_cli::commands::{self, EvalArgs};
use rcan_cli::RunConfig;
use rcan_core::RcanConfig;

/// Residual channel attention networks for single-image super-resolution.
#[derive(Parser)]
#[command(name = "rcan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Degradation {
    Bi,
    Bd,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured checkpoint path.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Super-resolve a PPM image.
    Sr {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Average over the eight flips and rotations of the input.
        #[arg(long)]
        ensemble: bool,
    },
    /// Score a checkpoint on a manifest of HR images (PSNR/SSIM on luma).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the checkpoint's scale.
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long, value_enum, default_value = "bi")]
        degradation: Degradation,
        #[arg(long)]
        ensemble: bool,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parameter count of a configuration (default: full-size ×4).
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Network to check; defaults to 2 groups × 2 blocks, 8 features, ×2.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Check a single seed instead of seeds 0..10.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Short training runs for all eight LSC × SSC × CA combinations.
    ///
    /// Reports desk-scale L1 training losses. These are not benchmark PSNR
    /// figures and are not comparable to published tables.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train { config, seed, checkpoint } => {
            let mut cfg = load(&config, seed)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            commands::train_cmd(&cfg, &mut out)?;
        }
        Command::Sr {
            checkpoint,
            input,
            out: output,
            ensemble,
        } => commands::sr(&checkpoint, &input, &output, ensemble)?,
        Command::Eval {
            checkpoint,
            manifest,
            scale,
            degradation,
            ensemble,
            out: csv,
        } => commands::eval(
            &EvalArgs {
                checkpoint: &checkpoint,
                manifest: &manifest,
                scale,
                degradation: match degradation {
                    Degradation::Bi => "bi",
                    Degradation::Bd => "bd",
                },
                ensemble,
                csv: csv.as_deref(),
            },
            &mut out,
        )?,
        Command::Params { config } => {
            let cfg = match config {
                Some(p) => load(&p, None)?,
                None => RunConfig::default(),
            };
            commands::params(&cfg, &mut out)?;
        }
        Command::Gradcheck { config, seed } => {
            let model = match config {
                Some(p) => load(&p, None)?.model,
                None => RcanConfig::tiny(2),
            };
            let seeds: Vec<u64> = match seed {
                Some(s) => vec![s],
                None => (0..10).collect(),
            };
            commands::gradcheck(&model, &seeds, &mut out)?;
        }
        Command::Ablate { config, seed } => {
            let cfg = load(&config, seed)?;
            let rows = commands::ablate(&cfg, &mut out)?;
            if rows.iter().any(|r| !r.final_loss.is_finite()) {
                bail!("an ablation run produced a non-finite loss");
            }
        }
    }
    out.flush().context("flushing output")?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
