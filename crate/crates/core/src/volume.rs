//! Volume ingestion and preparation: HU windowing, resampling to a common
//! voxel size and conversion to fixed-size 8-bit axial slices.
//!
//! On disk a volume is a directory of axial PGM slices (sorted by file name)
//! plus a `header.txt` sidecar:
//!
//! ```text
//! spacing 0.9 0.9 2.5
//! modality CT
//! patient_id P01
//! rescale_slope 1        # optional: value = slope * sample + intercept
//! rescale_intercept -1024
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SliceSample;
use crate::error::{Error, Result};
use crate::image::{quantize, read_pgm, write_pgm16, write_pgm8, Image};

pub const HEADER_FILE: &str = "header.txt";

/// Acquisition modality. `A` and `B` tag volumes already prepared to 8-bit
/// grayscale in the CT-like and MR-like domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Ct,
    Mr,
    A,
    B,
}

impl Modality {
    pub fn is_prepared(self) -> bool {
        matches!(self, Modality::A | Modality::B)
    }

    pub fn is_source_domain(self) -> bool {
        matches!(self, Modality::Ct | Modality::A)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Ct => "CT",
            Modality::Mr => "MR",
            Modality::A => "A",
            Modality::B => "B",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CT" => Ok(Modality::Ct),
            "MR" => Ok(Modality::Mr),
            "A" => Ok(Modality::A),
            "B" => Ok(Modality::B),
            other => Err(Error::invalid("modality", format!("{other:?} is not one of CT, MR, A, B"))),
        }
    }
}

/// Voxel spacing in millimetres, `(x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spacing(pub [f64; 3]);

impl Spacing {
    pub const ISOTROPIC_1MM: Spacing = Spacing([1.0, 1.0, 1.0]);

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|&s| s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("spacing", format!("{:?} must be positive", self.0)))
        }
    }
}

/// Scalar volume stored z-major: index `(z * ny + y) * nx + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub voxels: Vec<f64>,
    /// `[nz, ny, nx]`
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub modality: Modality,
    pub patient_id: String,
}

impl Volume {
    pub fn new(voxels: Vec<f64>, dims: [usize; 3], spacing: Spacing, modality: Modality, patient_id: impl Into<String>) -> Result<Self> {
        spacing.validate()?;
        if voxels.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid("volume", format!("dims {dims:?} do not match {} voxels", voxels.len())));
        }
        Ok(Self { voxels, dims, spacing, modality, patient_id: patient_id.into() })
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f64 {
        self.voxels[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let plane = self.dims[1] * self.dims[2];
        &self.voxels[z * plane..(z + 1) * plane]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.voxels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// HU display window.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub center: f64,
    pub length: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { center: 40.0, length: 80.0 }
    }
}

/// Single-value window: `[center - L/2, center + L/2]` maps linearly onto
/// `[0, 255]`, clips outside, rounds half-up.
pub fn window_value(hu: f64, window: &WindowSpec) -> f64 {
    let low = window.center - window.length / 2.0;
    quantize((hu - low) / window.length * 255.0) as f64
}

/// Windows a CT volume; the result is tagged as prepared domain `A`.
pub fn window_hu(volume: &Volume, window: &WindowSpec) -> Result<Volume> {
    if !(window.length > 0.0) {
        return Err(Error::invalid("window", format!("length {} must be positive", window.length)));
    }
    if volume.modality != Modality::Ct {
        return Err(Error::invalid("window", format!("windowing needs a CT volume, got {}", volume.modality)));
    }
    Ok(Volume { voxels: volume.voxels.iter().map(|&v| window_value(v, window)).collect(), modality: Modality::A, ..volume.clone() })
}

/// Per-volume min-max scaling onto `[0, 255]` (half-up rounding) for MR
/// volumes, which carry no absolute intensity scale. Constant volumes map to 0.
pub fn normalize_min_max(volume: &Volume) -> Volume {
    let (lo, hi) = volume.min_max();
    let range = hi - lo;
    let voxels = volume.voxels.iter().map(|&v| if range > 0.0 { quantize((v - lo) / range * 255.0) as f64 } else { 0.0 }).collect();
    Volume { voxels, modality: Modality::B, ..volume.clone() }
}

/// Linear resampling along one axis of a z-major buffer.
fn resample_axis(data: &[f64], dims: [usize; 3], axis: usize, out_len: usize, step: f64) -> Vec<f64> {
    let mut out_dims = dims;
    out_dims[axis] = out_len;
    let in_len = dims[axis];
    let strides = [dims[1] * dims[2], dims[2], 1];
    let out_strides = [out_dims[1] * out_dims[2], out_dims[2], 1];
    let taps: Vec<(usize, usize, f64)> = (0..out_len)
        .map(|o| {
            let pos = (o as f64 * step).min((in_len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect();
    let mut out = vec![0.0; out_dims.iter().product()];
    for z in 0..out_dims[0] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[2] {
                let idx = [z, y, x];
                let (lo, hi, t) = taps[idx[axis]];
                let mut base = 0;
                for a in 0..3 {
                    if a != axis {
                        base += idx[a] * strides[a];
                    }
                }
                let v0 = data[base + lo * strides[axis]];
                let v1 = data[base + hi * strides[axis]];
                out[z * out_strides[0] + y * out_strides[1] + x] = if t == 0.0 { v0 } else { v0 + (v1 - v0) * t };
            }
        }
    }
    out
}

/// Trilinear resampling to `target` spacing. Output dimensions are
/// `round(dim * spacing / target)`; output voxel `i` sits at physical offset
/// `i * target` from the first input voxel, clamped to the input extent.
pub fn resample(volume: &Volume, target: Spacing) -> Result<Volume> {
    target.validate()?;
    if volume.voxels.is_empty() {
        return Err(Error::Empty("volume"));
    }
    // axis order of dims is [z, y, x]; spacing is (x, y, z)
    let spacing_of = |axis: usize, s: &Spacing| s.0[2 - axis];
    let mut data = volume.voxels.clone();
    let mut dims = volume.dims;
    for axis in [2, 1, 0] {
        let (src, dst) = (spacing_of(axis, &volume.spacing), spacing_of(axis, &target));
        if src == dst {
            continue;
        }
        if dims[axis] == 1 {
            return Err(Error::invalid("volume", format!("axis {axis} has a single voxel and cannot be resampled")));
        }
        let out_len = ((dims[axis] as f64 * src / dst) + 0.5).floor().max(1.0) as usize;
        data = resample_axis(&data, dims, axis, out_len, dst / src);
        dims[axis] = out_len;
    }
    Volume::new(data, dims, target, volume.modality, volume.patient_id.clone())
}

/// Bilinear rescale of one plane with pixel-center alignment.
pub fn rescale_plane(src: &[f64], width: usize, height: usize, size: usize) -> Vec<f64> {
    if width == size && height == size {
        return src.to_vec();
    }
    let coord = |o: usize, in_len: usize| {
        let c = ((o as f64 + 0.5) * in_len as f64 / size as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
        let lo = c.floor() as usize;
        (lo, (lo + 1).min(in_len - 1), c - lo as f64)
    };
    let mut out = vec![0.0; size * size];
    for oy in 0..size {
        let (y0, y1, ty) = coord(oy, height);
        for ox in 0..size {
            let (x0, x1, tx) = coord(ox, width);
            let top = src[y0 * width + x0] * (1.0 - tx) + src[y0 * width + x1] * tx;
            let bottom = src[y1 * width + x0] * (1.0 - tx) + src[y1 * width + x1] * tx;
            out[oy * size + ox] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// Axial slices rescaled to `slice_size`², in axial order, clamped to [0, 255].
pub fn to_slices(volume: &Volume, slice_size: usize) -> Result<Vec<SliceSample>> {
    if volume.voxels.is_empty() || volume.dims.contains(&0) {
        return Err(Error::Empty("volume"));
    }
    if slice_size == 0 {
        return Err(Error::invalid("slice size", "must be positive"));
    }
    let [nz, ny, nx] = volume.dims;
    (0..nz)
        .map(|z| {
            let plane = rescale_plane(volume.slice(z), nx, ny, slice_size);
            let image = Image::from_vec(slice_size, slice_size, plane.iter().map(|&v| v.clamp(0.0, 255.0) as f32).collect())?;
            Ok(if volume.modality.is_source_domain() { SliceSample::unpaired_a(image) } else { SliceSample::unpaired_b(image) })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrepConfig {
    pub window: WindowSpec,
    pub target_spacing: Spacing,
    pub slice_size: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { window: WindowSpec::default(), target_spacing: Spacing::ISOTROPIC_1MM, slice_size: 256 }
    }
}

/// Full preparation: resample, then window (CT) or min-max scale (MR), then
/// rescale every axial slice to `slice_size`² and round to integer levels.
/// Volumes already tagged `A`/`B` skip the intensity step, which makes the
/// operation idempotent on its own output.
pub fn prepare(volume: &Volume, cfg: &PrepConfig) -> Result<Volume> {
    let resampled = resample(volume, cfg.target_spacing)?;
    let normalized = match resampled.modality {
        Modality::Ct => window_hu(&resampled, &cfg.window)?,
        Modality::Mr => normalize_min_max(&resampled),
        Modality::A | Modality::B => resampled,
    };
    let slices = to_slices(&normalized, cfg.slice_size)?;
    let [nz, ny, nx] = normalized.dims;
    let mut voxels = Vec::with_capacity(nz * cfg.slice_size * cfg.slice_size);
    for s in &slices {
        voxels.extend(s.image().to_u8().into_iter().map(f64::from));
    }
    let [tx, ty, tz] = cfg.target_spacing.0;
    let spacing = Spacing([tx * nx as f64 / cfg.slice_size as f64, ty * ny as f64 / cfg.slice_size as f64, tz]);
    Volume::new(voxels, [nz, cfg.slice_size, cfg.slice_size], spacing, normalized.modality, normalized.patient_id)
}

fn slice_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads a volume directory (see module docs).
pub fn read_volume(dir: &Path) -> Result<Volume> {
    let header_path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let mut spacing = None;
    let mut modality = None;
    let mut patient_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let (mut slope, mut intercept) = (1.0, 0.0);
    let bad = |reason: String| Error::invalid("volume header", format!("{}: {reason}", header_path.display()));
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        match (key, rest.as_slice()) {
            ("spacing", [x, y, z]) => spacing = Some(Spacing([num(x)?, num(y)?, num(z)?])),
            ("modality", [m]) => modality = Some(m.parse::<Modality>()?),
            ("patient_id", [p]) => patient_id = p.to_string(),
            ("rescale_slope", [v]) => slope = num(v)?,
            ("rescale_intercept", [v]) => intercept = num(v)?,
            _ => return Err(bad(format!("unrecognized line {line:?}"))),
        }
    }
    let spacing = spacing.ok_or_else(|| bad("missing spacing".into()))?;
    let modality = modality.ok_or_else(|| bad("missing modality".into()))?;
    let files = slice_files(dir)?;
    if files.is_empty() {
        return Err(Error::Empty("volume directory"));
    }
    let mut voxels = Vec::new();
    let mut plane_dims = None;
    for f in &files {
        let r = read_pgm(f)?;
        if *plane_dims.get_or_insert((r.width, r.height)) != (r.width, r.height) {
            return Err(Error::invalid("volume", format!("{} has a different slice size", f.display())));
        }
        voxels.extend(r.samples.iter().map(|&s| slope * s as f64 + intercept));
    }
    let (w, h) = plane_dims.unwrap_or_default();
    Volume::new(voxels, [files.len(), h, w], spacing, modality, patient_id)
}

/// Writes a volume directory. Prepared (`A`/`B`) volumes are stored as 8-bit
/// slices; raw volumes as 16-bit slices with a rescale intercept.
pub fn write_volume(volume: &Volume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [nz, ny, nx] = volume.dims;
    let [sx, sy, sz] = volume.spacing.0;
    let mut header = format!("spacing {sx} {sy} {sz}\nmodality {}\npatient_id {}\n", volume.modality, volume.patient_id);
    let intercept = if volume.modality.is_prepared() { 0.0 } else { volume.min_max().0.floor() };
    if !volume.modality.is_prepared() {
        header.push_str(&format!("rescale_slope 1\nrescale_intercept {intercept}\n"));
    }
    for z in 0..nz {
        let path = dir.join(format!("slice_{z:04}.pgm"));
        if volume.modality.is_prepared() {
            let px: Vec<u8> = volume.slice(z).iter().map(|&v| quantize(v)).collect();
            write_pgm8(&path, nx, ny, &px)?;
        } else {
            let px: Vec<u16> = volume.slice(z).iter().map(|&v| (v - intercept).round().clamp(0.0, 65535.0) as u16).collect();
            write_pgm16(&path, nx, ny, &px)?;
        }
    }
    let header_path = dir.join(HEADER_FILE);
    fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))
}
