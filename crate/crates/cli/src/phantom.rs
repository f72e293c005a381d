use std::path::PathBuf;

use anyhow::Result;
use dualgan_core::phantom::{generate_phantom, PhantomSpec};

use crate::common::usage;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Seed for every geometry stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of aligned A/B pairs.
    #[arg(long, default_value_t = 8)]
    paired: usize,
    /// Number of unpaired slices in each domain.
    #[arg(long, default_value_t = 16)]
    unpaired: usize,
    /// Slice edge length in pixels (multiple of 4, at least 16).
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Number of extra shapes per slice.
    #[arg(long, default_value_t = 4)]
    complexity: usize,
    /// Output directory; receives paired/, unpaired/ and manifest.txt.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    let spec = PhantomSpec {
        seed: args.seed,
        num_paired: args.paired,
        num_unpaired_a: args.unpaired,
        num_unpaired_b: args.unpaired,
        slice_size: args.size,
        shape_complexity: args.complexity,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = generate_phantom(&spec, &args.out)?;
    println!("wrote {} slices ({} pairs) to {}", manifest.entries.len(), manifest.num_pairs(), args.out.display());
    Ok(())
}
