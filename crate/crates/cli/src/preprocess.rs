use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dualgan_core::volume::{prepare, read_volume, write_volume, PrepConfig, Spacing, Volume, WindowSpec, HEADER_FILE};

use crate::common::usage;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// A volume directory, or a directory of volume directories.
    #[arg(long)]
    input: PathBuf,
    /// Output directory (mirrors the input layout).
    #[arg(long)]
    out: PathBuf,
    /// HU window center.
    #[arg(long, default_value_t = 40.0)]
    window_center: f64,
    /// HU window length.
    #[arg(long, default_value_t = 80.0)]
    window_length: f64,
    /// Target voxel spacing in mm (x y z).
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [1.0, 1.0, 1.0])]
    target_spacing: Vec<f64>,
    /// Output slice edge length in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
}

fn is_volume(dir: &Path) -> bool {
    dir.join(HEADER_FILE).is_file()
}

/// `(output dir, volume)` for every input volume.
fn load_inputs(input: &Path, out: &Path) -> Result<Vec<(PathBuf, Volume)>> {
    if is_volume(input) {
        return Ok(vec![(out.to_path_buf(), read_volume(input)?)]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_volume(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("{} holds no volume directories (none has a {HEADER_FILE})", input.display());
    }
    dirs.iter().map(|d| Ok((out.join(d.file_name().expect("directory entry")), read_volume(d)?))).collect()
}

pub fn run(args: Args) -> Result<()> {
    let cfg = PrepConfig {
        window: WindowSpec { center: args.window_center, length: args.window_length },
        target_spacing: Spacing([args.target_spacing[0], args.target_spacing[1], args.target_spacing[2]]),
        slice_size: args.size,
    };
    if !(cfg.window.length > 0.0) {
        return Err(usage("--window-length must be positive"));
    }
    cfg.target_spacing.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.slice_size == 0 {
        return Err(usage("--size must be positive"));
    }
    let prepared = load_inputs(&args.input, &args.out)?
        .into_iter()
        .map(|(dir, volume)| Ok((dir, prepare(&volume, &cfg).with_context(|| format!("preparing {}", volume.patient_id))?)))
        .collect::<Result<Vec<_>>>()?;
    for (dir, volume) in &prepared {
        write_volume(volume, dir)?;
        println!("{}: {} slices of {}x{} -> {}", volume.patient_id, volume.dims[0], volume.dims[2], volume.dims[1], dir.display());
    }
    Ok(())
}
