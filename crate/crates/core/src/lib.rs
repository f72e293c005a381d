//! Paired/unpaired cycle-consistent CT-to-MR slice translation.
//!
//! The crate covers the full pipeline: synthetic phantom data, CT/MR volume
//! preparation, deterministic sampling and augmentation, the generator and
//! patch-discriminator networks, the adversarial/cycle/L1 objectives, the
//! alternating trainer with checkpoints, and MAE/PSNR evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod manifest;
pub mod networks;
pub mod objectives;
pub mod phantom;
pub mod rng;
pub mod trainer;
pub mod volume;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use image::Image;
