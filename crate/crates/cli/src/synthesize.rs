use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use dualgan_core::image::Image;
use dualgan_core::networks::Generator;
use dualgan_core::trainer::translate;
use dualgan_core::volume::{read_volume, write_volume, Modality, Volume, HEADER_FILE};

use crate::common::{load_state, pgm_files, read_slices};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prepared CT volume directory, or a directory of 8-bit PGM slices.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for the synthesized MR slices.
    #[arg(long)]
    out: PathBuf,
}

fn synthesize(generator: &Generator<f32>, slices: &[Image]) -> Result<Vec<Image>> {
    slices.iter().map(|s| Ok(translate(generator, s)?.quantized())).collect()
}

pub fn run(args: Args) -> Result<()> {
    let (_, state) = load_state(&args.checkpoint)?;
    let generator = &state.networks.syn_mr;
    if args.input.join(HEADER_FILE).is_file() {
        let volume = read_volume(&args.input)?;
        if volume.modality != Modality::A {
            bail!("{} is a {} volume; run preprocess first", args.input.display(), volume.modality);
        }
        let [nz, ny, nx] = volume.dims;
        let slices =
            (0..nz).map(|z| Ok(Image::from_vec(nx, ny, volume.slice(z).iter().map(|&v| v as f32).collect())?)).collect::<Result<Vec<_>>>()?;
        let out = synthesize(generator, &slices)?;
        let voxels = out.iter().flat_map(|s| s.data.iter().map(|&v| v as f64)).collect();
        write_volume(&Volume::new(voxels, volume.dims, volume.spacing, Modality::B, volume.patient_id)?, &args.out)?;
        println!("synthesized {nz} slices into {}", args.out.display());
        return Ok(());
    }
    let files = pgm_files(&args.input)?;
    if files.is_empty() {
        bail!("{} holds no PGM slices", args.input.display());
    }
    let out = synthesize(generator, &read_slices(&files)?)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (file, image) in files.iter().zip(&out) {
        image.write_pgm(&args.out.join(file.file_name().expect("file")))?;
    }
    println!("synthesized {} slices into {}", out.len(), args.out.display());
    Ok(())
}
