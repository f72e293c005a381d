use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dualgan_core::image::Image;
use dualgan_core::trainer::{Checkpoint, TrainState};
use dualgan_core::RunConfig;

/// Invalid flags or configuration; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

/// PGM files directly inside `dir`, sorted by name.
pub fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_slices(files: &[PathBuf]) -> Result<Vec<Image>> {
    files.iter().map(|f| Image::read_pgm(f).with_context(|| format!("reading {}", f.display()))).collect()
}

/// Training state rebuilt from the configuration echoed inside a checkpoint.
pub fn load_state(path: &Path) -> Result<(RunConfig, TrainState<f32>)> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    let config = RunConfig::from_toml(&ckpt.config_echo).with_context(|| format!("config stored in {}", path.display()))?;
    let mut state = TrainState::new(&config.generator, &config.discriminator_spec()?, &config.train)?;
    state.restore(&ckpt, path)?;
    Ok((config, state))
}
