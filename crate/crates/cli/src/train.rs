use std::path::PathBuf;

use anyhow::{Context, Result};
use dualgan_core::trainer::{RunDir, Trainer};
use dualgan_core::RunConfig;

use crate::common::usage;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// TOML run configuration; relative paths resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Train until this many iterations are complete (default: train.total_iterations).
    #[arg(long)]
    iters: Option<u64>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run directory, overriding output.run_dir.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Print a progress line every N iterations.
    #[arg(long, default_value_t = 100)]
    progress_every: u64,
}

pub fn run(args: Args) -> Result<()> {
    let mut config = RunConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(dir) = args.run_dir {
        config.output.run_dir = dir;
    }
    config.validate(true)?;
    let total = config.train.total_iterations;
    let until = args.iters.unwrap_or(total);
    if until > total {
        return Err(usage(format!("--iters {until} exceeds train.total_iterations {total}")));
    }
    let mut trainer = Trainer::new(config)?;
    let resume_at = match &args.resume {
        Some(path) => {
            trainer.resume(path)?;
            Some(trainer.state.iteration)
        }
        None => None,
    };
    if trainer.state.iteration > until {
        return Err(usage(format!("checkpoint is at iteration {}, past --iters {until}", trainer.state.iteration)));
    }
    let root = trainer.config.output.run_dir.clone();
    let mut dir = RunDir::create(&root, &trainer.config, resume_at)?;
    let every = args.progress_every.max(1);
    trainer.run(until, Some(&mut dir), |o| {
        if o.iteration % every == 0 || o.iteration == until {
            eprintln!("iter {:>7}  lr {:.3e}  g {:.4}  l1 {:.4}", o.iteration, o.lr, o.report.total_g, o.report.l1_paired);
        }
    })?;
    println!("trained to iteration {until}; run directory {}", root.display());
    Ok(())
}
