//! Command-line wiring: configuration, training loop, and the `synth`,
//! `train`, `eval`, `ablate` and `gradcheck` subcommands.

mod commands;
mod config;
mod gradsuite;
mod train;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, prepare_split, AblationResult, DirLock, LOCK_FILE,
};
pub use config::{config_hash, merge, AblateConfig, EvalConfig, PathsConfig, Preset, RunConfig};
pub use gradsuite::{gradient_suite, GradCase, GRAD_TOLERANCE};
pub use train::{load_model, run_training, EpochLoss, TrainConfig, TrainOutcome, TrainRun, CHECKPOINT_FILE, LOSS_FILE};

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "twin-htp", about = "Twin latent diffusion for egocentric 3D hand trajectory prediction")]
pub struct Cli {
    /// TOML file layered over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Overrides the data, training and evaluation seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/desk")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/test sequences.
    Synth,
    /// Train both diffusion streams.
    Train {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score the trained model and the baselines on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured ablation sweeps.
    Ablate,
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Gradcheck = cli.command {
        cmd_gradcheck(cli.seed.unwrap_or(0))?;
        return Ok(());
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.preset)?;
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    let out = &cli.out;
    match cli.command {
        Command::Synth => {
            let m = cmd_synth(&cfg, out)?;
            println!("{} train + {} test sequences in {}", m.train.len(), m.test.len(), cfg.dataset_dir(out).display());
        }
        Command::Train { resume } => {
            let o = cmd_train(&cfg, out, resume)?;
            if let (Some(first), Some(last)) = (o.history.first(), o.history.last()) {
                println!("loss {:.5} -> {:.5}; checkpoint {}", first.mean.total, last.mean.total, o.checkpoint.display());
            }
        }
        Command::Eval { checkpoint } => {
            for r in cmd_eval(&cfg, out, checkpoint.as_deref())? {
                println!("{:<18} ADE {:.4} m  FDE {:.4} m", r.model_tag, r.mean.ade3d, r.mean.fde3d);
            }
        }
        Command::Ablate => {
            for r in cmd_ablate(&cfg, out)? {
                println!("{:<8} {:<28} ADE {:.4} m", r.sweep.tag(), r.variant, r.report.mean.ade3d);
            }
        }
        Command::Gradcheck => unreachable!("handled above"),
    }
    Ok(())
}
