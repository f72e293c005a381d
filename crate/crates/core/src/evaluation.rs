//! MAE / MSE / PSNR between reference and synthesized volumes, per-patient
//! reports, and the cycle-reconstruction diagnostic.
//!
//! A volume is a slice list on the 8-bit intensity scale. MAE and MSE
//! average over every pixel of every slice.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;

pub const MAX_INTENSITY: f64 = 255.0;
/// Denominator offset of the relative difference map.
pub const RELATIVE_EPS: f64 = 1e-6;

fn check_pairing(reference: &[Image], synthesized: &[Image]) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::Empty("reference volume"));
    }
    if reference.len() != synthesized.len() {
        return Err(Error::ShapeMismatch { op: "slice pairing", lhs: vec![reference.len()], rhs: vec![synthesized.len()] });
    }
    for (r, s) in reference.iter().zip(synthesized) {
        if r.dims() != s.dims() {
            return Err(Error::ShapeMismatch { op: "slice pairing", lhs: vec![r.width, r.height], rhs: vec![s.width, s.height] });
        }
    }
    Ok(())
}

fn mean_over_pixels(reference: &[Image], synthesized: &[Image], f: impl Fn(f64) -> f64) -> Result<f64> {
    check_pairing(reference, synthesized)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (r, s) in reference.iter().zip(synthesized) {
        sum += r.data.iter().zip(&s.data).map(|(&a, &b)| f(a as f64 - b as f64)).sum::<f64>();
        count += r.data.len();
    }
    Ok(sum / count as f64)
}

pub fn mae(reference: &[Image], synthesized: &[Image]) -> Result<f64> {
    mean_over_pixels(reference, synthesized, f64::abs)
}

pub fn mse(reference: &[Image], synthesized: &[Image]) -> Result<f64> {
    mean_over_pixels(reference, synthesized, |d| d * d)
}

/// `10 log10(255^2 / mse)`; positive infinity when `mse` is zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_INTENSITY * MAX_INTENSITY / mse).log10()
    }
}

pub fn psnr(reference: &[Image], synthesized: &[Image]) -> Result<f64> {
    Ok(psnr_from_mse(mse(reference, synthesized)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub mae: f64,
    pub mse: f64,
    pub psnr: f64,
}

impl PatientMetrics {
    pub fn psnr_infinite(&self) -> bool {
        self.psnr.is_infinite()
    }
}

/// Mean and sample standard deviation (n - 1 denominator).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Zero for a single sample; NaN when the mean is infinite.
    pub sd: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Empty("summary values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return Ok(Summary { mean, sd: f64::NAN });
    }
    if values.len() == 1 {
        return Ok(Summary { mean, sd: 0.0 });
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(Summary { mean, sd: (ss / (n - 1.0)).sqrt() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_patient: Vec<PatientMetrics>,
    pub mae: Summary,
    pub psnr: Summary,
    /// Set when only one patient contributed, so the SD is not meaningful.
    pub single_sample: bool,
}

/// One reference/synthesized volume pair.
#[derive(Clone, Copy, Debug)]
pub struct PatientVolumes<'a> {
    pub patient_id: &'a str,
    pub reference: &'a [Image],
    pub synthesized: &'a [Image],
}

pub fn report(patients: &[PatientVolumes<'_>]) -> Result<MetricsReport> {
    if patients.is_empty() {
        return Err(Error::Empty("patient list"));
    }
    let per_patient = patients
        .iter()
        .map(|p| {
            let mse = mse(p.reference, p.synthesized)?;
            Ok(PatientMetrics { patient_id: p.patient_id.to_string(), mae: mae(p.reference, p.synthesized)?, mse, psnr: psnr_from_mse(mse) })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(per_patient)
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.2}")
    }
}

impl MetricsReport {
    pub fn from_rows(per_patient: Vec<PatientMetrics>) -> Result<Self> {
        let maes: Vec<f64> = per_patient.iter().map(|p| p.mae).collect();
        let psnrs: Vec<f64> = per_patient.iter().map(|p| p.psnr).collect();
        Ok(Self { mae: summarize(&maes)?, psnr: summarize(&psnrs)?, single_sample: per_patient.len() == 1, per_patient })
    }

    pub fn any_psnr_infinite(&self) -> bool {
        self.per_patient.iter().any(PatientMetrics::psnr_infinite)
    }

    /// `patient,mae,mse,psnr` rows followed by `mean` and `sd` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("patient,mae,mse,psnr\n");
        for p in &self.per_patient {
            let _ = writeln!(out, "{},{},{},{}", p.patient_id, p.mae, p.mse, p.psnr);
        }
        let mse = summarize(&self.per_patient.iter().map(|p| p.mse).collect::<Vec<_>>()).expect("non-empty");
        let _ = writeln!(out, "mean,{},{},{}", self.mae.mean, mse.mean, self.psnr.mean);
        let _ = writeln!(out, "sd,{},{},{}", self.mae.sd, mse.sd, self.psnr.sd);
        out
    }

    /// Aligned table: one row per patient, then `Avg±sd`.
    pub fn to_table(&self) -> String {
        let mut rows = vec![("".to_string(), "MAE".to_string(), "PSNR".to_string())];
        for p in &self.per_patient {
            rows.push((p.patient_id.clone(), fmt_value(p.mae), fmt_value(p.psnr)));
        }
        let pm = |s: Summary| format!("{}±{}", fmt_value(s.mean), fmt_value(s.sd));
        rows.push(("Avg±sd".into(), pm(self.mae), pm(self.psnr)));
        let width = |f: fn(&(String, String, String)) -> &String| rows.iter().map(|r| f(r).chars().count()).max().unwrap_or(0);
        let (w0, w1, w2) = (width(|r| &r.0), width(|r| &r.1), width(|r| &r.2));
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
        let mut out = String::new();
        for (a, b, c) in &rows {
            let _ = writeln!(out, "{}  {}  {}", pad(a, w0), pad(b, w1), pad(c, w2).trim_end());
        }
        if self.single_sample {
            out.push_str("(single patient: sd not defined, shown as 0)\n");
        }
        out
    }
}

/// `|x - x_hat| / (|x| + eps)` per pixel.
pub fn relative_difference(x: &Image, x_hat: &Image, eps: f64) -> Result<Image> {
    if x.dims() != x_hat.dims() {
        return Err(Error::ShapeMismatch { op: "relative_difference", lhs: vec![x.width, x.height], rhs: vec![x_hat.width, x_hat.height] });
    }
    let data = x.data.iter().zip(&x_hat.data).map(|(&a, &b)| ((a as f64 - b as f64).abs() / ((a as f64).abs() + eps)) as f32).collect();
    Image::from_vec(x.width, x.height, data)
}

/// Relative difference map scaled for display: 0 maps to 0 and values at
/// or above `saturate_at` map to 255.
pub fn difference_map_image(map: &Image, saturate_at: f64) -> Image {
    let data = map.data.iter().map(|&v| ((v as f64 / saturate_at).clamp(0.0, 1.0) * 255.0) as f32).collect();
    Image { width: map.width, height: map.height, data }.quantized()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleDiagnostic {
    pub reconstructed: Vec<Image>,
    pub relative_difference: Vec<Image>,
}

/// Sends every slice through `forward` then `backward` and compares the
/// reconstruction with the input.
pub fn cycle_reconstruction_diag(
    input: &[Image],
    forward: impl Fn(&Image) -> Result<Image>,
    backward: impl Fn(&Image) -> Result<Image>,
    eps: f64,
) -> Result<CycleDiagnostic> {
    let mut reconstructed = Vec::with_capacity(input.len());
    let mut relative = Vec::with_capacity(input.len());
    for x in input {
        let x_hat = backward(&forward(x)?)?;
        relative.push(relative_difference(x, &x_hat, eps)?);
        reconstructed.push(x_hat);
    }
    Ok(CycleDiagnostic { reconstructed, relative_difference: relative })
}
