//! Deterministic two-domain phantom datasets.
//!
//! Domain-A slices are piecewise-constant: a background of 0, a large
//! "head" ellipse and `shape_complexity` smaller ellipses or rectangles.
//! Domain-B slices are obtained from A by the fixed per-slice mapping
//! [`forward_map`]:
//!
//! 1. inversion, `u = 1 - a / 255`;
//! 2. separable smoothing with the kernel `[1/16, 7/8, 1/16]` along rows and
//!    then columns, replicating border pixels;
//! 3. contrast curve `c = s^0.8`;
//! 4. `b = round_half_up(255 * c)`.
//!
//! Every step is invertible ([`inverse_map`]); the smoothing operator is a
//! strictly diagonally dominant tridiagonal matrix per axis, inverted with the
//! Thomas algorithm. Its inverse has infinity-norm at most 1/0.75 per axis, so
//! the 8-bit quantization of B perturbs the recovered A by at most ~1.1 levels
//! before rounding, i.e. one gray level after.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{quantize, write_pgm8};
use crate::manifest::{DatasetManifest, Domain, ManifestEntry, Split};
use crate::rng::{stream_rng, Stream};

pub const SMOOTH_SIDE: f64 = 1.0 / 16.0;
pub const SMOOTH_CENTER: f64 = 7.0 / 8.0;
pub const CONTRAST_GAMMA: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub num_paired: usize,
    pub num_unpaired_a: usize,
    pub num_unpaired_b: usize,
    pub slice_size: usize,
    pub shape_complexity: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self { seed: 0, num_paired: 8, num_unpaired_a: 16, num_unpaired_b: 16, slice_size: 64, shape_complexity: 4 }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.slice_size < 16 || !self.slice_size.is_multiple_of(4) {
            return Err(Error::invalid("phantom spec", format!("slice_size {} must be >= 16 and divisible by 4", self.slice_size)));
        }
        if self.shape_complexity > 64 {
            return Err(Error::invalid("phantom spec", "shape_complexity must be <= 64"));
        }
        Ok(())
    }
}

fn smooth_line(line: &mut [f64], scratch: &mut Vec<f64>) {
    let n = line.len();
    scratch.clear();
    scratch.extend_from_slice(line);
    for i in 0..n {
        let left = scratch[i.saturating_sub(1)];
        let right = scratch[(i + 1).min(n - 1)];
        line[i] = SMOOTH_SIDE * left + SMOOTH_CENTER * scratch[i] + SMOOTH_SIDE * right;
    }
}

/// Solves the replicate-border smoothing system for one line (Thomas algorithm).
fn unsmooth_line(line: &mut [f64]) {
    let n = line.len();
    if n == 1 {
        return;
    }
    let (a, c) = (SMOOTH_SIDE, SMOOTH_CENTER);
    let diag = |i: usize| if i == 0 || i == n - 1 { c + a } else { c };
    let mut upper = vec![0.0; n];
    upper[0] = a / diag(0);
    line[0] /= diag(0);
    for i in 1..n {
        let denom = diag(i) - a * upper[i - 1];
        upper[i] = a / denom;
        line[i] = (line[i] - a * line[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        line[i] -= upper[i] * line[i + 1];
    }
}

fn separable(plane: &mut [f64], size: usize, f: &mut impl FnMut(&mut [f64])) {
    for row in plane.chunks_mut(size) {
        f(row);
    }
    let mut column = vec![0.0; size];
    for x in 0..size {
        for y in 0..size {
            column[y] = plane[y * size + x];
        }
        f(&mut column);
        for y in 0..size {
            plane[y * size + x] = column[y];
        }
    }
}

/// Maps a domain-A slice to its domain-B counterpart.
pub fn forward_map(a: &[u8], size: usize) -> Vec<u8> {
    assert_eq!(a.len(), size * size);
    let mut plane: Vec<f64> = a.iter().map(|&v| 1.0 - v as f64 / 255.0).collect();
    let mut scratch = Vec::with_capacity(size);
    separable(&mut plane, size, &mut |line| smooth_line(line, &mut scratch));
    plane.iter().map(|&s| quantize(255.0 * s.clamp(0.0, 1.0).powf(CONTRAST_GAMMA))).collect()
}

/// Analytic inverse of [`forward_map`], exact up to one gray level.
pub fn inverse_map(b: &[u8], size: usize) -> Vec<u8> {
    assert_eq!(b.len(), size * size);
    let mut plane: Vec<f64> = b.iter().map(|&v| (v as f64 / 255.0).powf(1.0 / CONTRAST_GAMMA)).collect();
    separable(&mut plane, size, &mut |line| unsmooth_line(line));
    plane.iter().map(|&u| quantize(255.0 * (1.0 - u))).collect()
}

fn inside_rotated_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64, angle: f64) -> bool {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (x - cx, y - cy);
    let u = (dx * c + dy * s) / rx;
    let v = (-dx * s + dy * c) / ry;
    u * u + v * v <= 1.0
}

/// Draws one piecewise-constant domain-A slice.
pub fn draw_slice(rng: &mut ChaCha8Rng, size: usize, complexity: usize) -> Vec<u8> {
    let n = size as f64;
    let mut img = vec![0u8; size * size];
    let head_cx = n / 2.0 + rng.random_range(-0.05..0.05) * n;
    let head_cy = n / 2.0 + rng.random_range(-0.05..0.05) * n;
    let head_rx = rng.random_range(0.30..0.45) * n;
    let head_ry = rng.random_range(0.30..0.45) * n;
    let head_level: u8 = rng.random_range(60..=110);
    let paint = |img: &mut [u8], level: u8, inside: &dyn Fn(f64, f64) -> bool| {
        for y in 0..size {
            for x in 0..size {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    img[y * size + x] = level;
                }
            }
        }
    };
    paint(&mut img, head_level, &|x, y| inside_rotated_ellipse(x, y, head_cx, head_cy, head_rx, head_ry, 0.0));
    for _ in 0..complexity {
        let cx = head_cx + rng.random_range(-0.6..0.6) * head_rx;
        let cy = head_cy + rng.random_range(-0.6..0.6) * head_ry;
        let rx = rng.random_range(0.04..0.15) * n;
        let ry = rng.random_range(0.04..0.15) * n;
        let level: u8 = rng.random_range(0..=255);
        if rng.random_bool(0.5) {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            paint(&mut img, level, &|x, y| inside_rotated_ellipse(x, y, cx, cy, rx, ry, angle));
        } else {
            paint(&mut img, level, &|x, y| (x - cx).abs() <= rx && (y - cy).abs() <= ry);
        }
    }
    img
}

fn slice_for(spec: &PhantomSpec, stream: Stream, index: usize) -> Vec<u8> {
    let mut rng = stream_rng(spec.seed, stream, index as u64);
    draw_slice(&mut rng, spec.slice_size, spec.shape_complexity)
}

/// Writes the dataset under `out_dir` and returns its manifest (also written
/// to `out_dir/manifest.txt`).
pub fn generate_phantom(spec: &PhantomSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let size = spec.slice_size;
    for sub in ["paired", "unpaired"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::new();
    let mut emit = |rel: String, pixels: &[u8], domain: Domain, split: Split, pair_id: Option<String>| -> Result<()> {
        write_pgm8(&out_dir.join(&rel), size, size, pixels)?;
        entries.push(ManifestEntry { path: PathBuf::from(rel), domain, split, pair_id });
        Ok(())
    };
    for i in 0..spec.num_paired {
        let a = slice_for(spec, Stream::PhantomPaired, i);
        let b = forward_map(&a, size);
        let id = format!("p{i:04}");
        emit(format!("paired/{id}_a.pgm"), &a, Domain::A, Split::Paired, Some(id.clone()))?;
        emit(format!("paired/{id}_b.pgm"), &b, Domain::B, Split::Paired, Some(id))?;
    }
    for i in 0..spec.num_unpaired_a {
        let a = slice_for(spec, Stream::PhantomUnpairedA, i);
        emit(format!("unpaired/a{i:04}.pgm"), &a, Domain::A, Split::Unpaired, None)?;
    }
    for i in 0..spec.num_unpaired_b {
        let a = slice_for(spec, Stream::PhantomUnpairedB, i);
        emit(format!("unpaired/b{i:04}.pgm"), &forward_map(&a, size), Domain::B, Split::Unpaired, None)?;
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        comments: vec![
            "phantom dataset".to_string(),
            format!("seed {}", spec.seed),
            format!("slice_size {}", spec.slice_size),
            format!("shape_complexity {}", spec.shape_complexity),
        ],
        entries,
    };
    manifest.write(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
