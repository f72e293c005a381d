use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dualgan_core::evaluation::{cycle_reconstruction_diag, difference_map_image, report, PatientVolumes, RELATIVE_EPS};
use dualgan_core::image::Image;
use dualgan_core::trainer::translate;

use crate::common::{load_state, pgm_files, read_slices, usage};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Reference slices: one directory per patient, or a single flat directory.
    #[arg(long)]
    reference: PathBuf,
    /// Synthesized slices in the same layout as the reference.
    #[arg(long)]
    synthesized: PathBuf,
    /// Write the per-patient CSV report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint for the cycle-reconstruction diagnostic.
    #[arg(long, requires_all = ["diag_input", "diag_out"])]
    checkpoint: Option<PathBuf>,
    /// CT slices to send through both generators.
    #[arg(long, requires = "checkpoint")]
    diag_input: Option<PathBuf>,
    /// Directory for reconstructed slices and relative-difference maps.
    #[arg(long, requires = "checkpoint")]
    diag_out: Option<PathBuf>,
    /// Relative difference shown as full white in the difference maps.
    #[arg(long, default_value_t = 1.0)]
    diag_saturate: f64,
}

struct Patient {
    id: String,
    reference: Vec<Image>,
    synthesized: Vec<Image>,
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn load_pair(id: String, reference: &Path, synthesized: &Path) -> Result<Patient> {
    let (ref_files, syn_files) = (pgm_files(reference)?, pgm_files(synthesized)?);
    if ref_files.is_empty() {
        bail!("{} holds no PGM slices", reference.display());
    }
    if ref_files.len() != syn_files.len() {
        bail!("patient {id}: {} reference slices but {} synthesized slices", ref_files.len(), syn_files.len());
    }
    Ok(Patient { id, reference: read_slices(&ref_files)?, synthesized: read_slices(&syn_files)? })
}

fn load_patients(reference: &Path, synthesized: &Path) -> Result<Vec<Patient>> {
    let dirs = subdirs(reference)?;
    if dirs.is_empty() {
        let id = reference.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "volume".into());
        return Ok(vec![load_pair(id, reference, synthesized)?]);
    }
    dirs.iter()
        .map(|d| {
            let name = d.file_name().expect("directory entry");
            let other = synthesized.join(name);
            if !other.is_dir() {
                bail!("no synthesized directory for patient {}", name.to_string_lossy());
            }
            load_pair(name.to_string_lossy().into_owned(), d, &other)
        })
        .collect()
}

fn cycle_diagnostic(checkpoint: &Path, input: &Path, out: &Path, saturate: f64) -> Result<()> {
    let (_, state) = load_state(checkpoint)?;
    let files = pgm_files(input)?;
    if files.is_empty() {
        bail!("{} holds no PGM slices", input.display());
    }
    let slices = read_slices(&files)?;
    let nets = &state.networks;
    let diag = cycle_reconstruction_diag(
        &slices,
        |x| Ok(translate(&nets.syn_mr, x)?.quantized()),
        |x| Ok(translate(&nets.syn_ct, x)?.quantized()),
        RELATIVE_EPS,
    )?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((file, recon), rel) in files.iter().zip(&diag.reconstructed).zip(&diag.relative_difference) {
        let stem = file.file_stem().expect("file").to_string_lossy();
        recon.write_pgm(&out.join(format!("{stem}_reconstructed.pgm")))?;
        difference_map_image(rel, saturate).write_pgm(&out.join(format!("{stem}_reldiff.pgm")))?;
        total += rel.data.iter().map(|&v| v as f64).sum::<f64>();
        count += rel.data.len();
    }
    println!("cycle reconstruction: mean relative difference {:.4} over {} slices", total / count as f64, files.len());
    Ok(())
}

pub fn run(args: Args) -> Result<()> {
    if !(args.diag_saturate > 0.0) {
        return Err(usage("--diag-saturate must be positive"));
    }
    let patients = load_patients(&args.reference, &args.synthesized)?;
    let volumes: Vec<PatientVolumes<'_>> =
        patients.iter().map(|p| PatientVolumes { patient_id: &p.id, reference: &p.reference, synthesized: &p.synthesized }).collect();
    let metrics = report(&volumes)?;
    print!("{}", metrics.to_table());
    if metrics.any_psnr_infinite() {
        println!("note: PSNR is infinite where reference and synthesized slices are identical");
    }
    if let Some(path) = &args.out {
        fs::write(path, metrics.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let (Some(ckpt), Some(input), Some(out)) = (&args.checkpoint, &args.diag_input, &args.diag_out) {
        cycle_diagnostic(ckpt, input, out, args.diag_saturate)?;
    }
    Ok(())
}
