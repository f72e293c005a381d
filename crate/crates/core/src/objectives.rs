//! Adversarial, cycle-consistency and voxel-wise losses.
//!
//! Each loss exists twice: a plain function over tensors returning an `f64`
//! (used for reporting and as a reference), and a graph version in [`graph`]
//! that records the same computation on a tape for differentiation. All
//! reductions are means.

use std::fmt;
use std::str::FromStr;

use dualgan_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorAdvMode {
    /// Descend `D(fake)^2` (unpaired) and `log(1 - D(fake))` (paired) literally.
    AsWritten,
    /// Descend `(D(fake) - 1)^2` (unpaired) and `-log D(fake)` (paired).
    #[default]
    NonSaturating,
}

impl fmt::Display for GeneratorAdvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorAdvMode::AsWritten => "as_written",
            GeneratorAdvMode::NonSaturating => "non_saturating",
        })
    }
}

impl FromStr for GeneratorAdvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(Self::AsWritten),
            "non_saturating" => Ok(Self::NonSaturating),
            other => Err(Error::Config(format!("unknown generator_adv_mode {other:?} (as_written, non_saturating)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight on the four cycle-consistency terms.
    pub lambda_cyc: f64,
    /// Weight on the two paired L1 terms.
    pub gamma_l1: f64,
    /// Weight on every adversarial term, discriminator and generator side.
    pub adversarial: f64,
    pub generator_adv_mode: GeneratorAdvMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_cyc: 10.0, gamma_l1: 100.0, adversarial: 1.0, generator_adv_mode: GeneratorAdvMode::NonSaturating }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_cyc", self.lambda_cyc), ("gamma_l1", self.gamma_l1), ("adversarial", self.adversarial)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid("loss weights", format!("{name} must be finite and non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Per-iteration loss decomposition. Generator-side fields sum both
/// translation directions; `total_g` is the weighted generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub d_mr_unpaired: f64,
    pub d_ct_unpaired: f64,
    pub d_mr_paired: f64,
    pub d_ct_paired: f64,
    pub g_adv_unpaired: f64,
    pub g_adv_paired: f64,
    pub cyc_unpaired: f64,
    pub cyc_paired: f64,
    pub l1_paired: f64,
    pub total_g: f64,
}

impl LossReport {
    pub const FIELDS: [&'static str; 10] = [
        "d_mr_unpaired",
        "d_ct_unpaired",
        "d_mr_paired",
        "d_ct_paired",
        "g_adv_unpaired",
        "g_adv_paired",
        "cyc_unpaired",
        "cyc_paired",
        "l1_paired",
        "total_g",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.d_mr_unpaired,
            self.d_ct_unpaired,
            self.d_mr_paired,
            self.d_ct_paired,
            self.g_adv_unpaired,
            self.g_adv_paired,
            self.cyc_unpaired,
            self.cyc_paired,
            self.l1_paired,
            self.total_g,
        ]
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::FIELDS.iter().zip(self.values()).find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in Self::FIELDS.iter().zip(self.values()).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{name}={v:.6}")?;
        }
        Ok(())
    }
}

/// Unweighted generator-side components, each summed over directions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorComponents {
    pub adv_unpaired: f64,
    pub adv_paired: f64,
    pub cyc_unpaired: f64,
    pub cyc_paired: f64,
    pub l1_paired: f64,
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    Ok(())
}

fn mean_of<T: Scalar>(t: &Tensor<T>, f: impl Fn(f64) -> f64) -> f64 {
    t.data().iter().map(|v| f(v.as_f64())).sum::<f64>() / t.len() as f64
}

fn check_probabilities<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    match t.data().iter().map(|v| v.as_f64()).find(|p| !(0.0..=1.0).contains(p)) {
        Some(p) => Err(Error::invalid(op, format!("expected probabilities in [0, 1], found {p}"))),
        None => Ok(()),
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0).ln()
}

/// Least-squares discriminator loss `mean((real - 1)^2) + mean(fake^2)`.
pub fn d_loss_unpaired<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    same_shape("d_loss_unpaired", d_real, d_fake)?;
    Ok(mean_of(d_real, |r| (r - 1.0) * (r - 1.0)) + mean_of(d_fake, |f| f * f))
}

pub fn g_loss_unpaired<T: Scalar>(d_fake: &Tensor<T>, mode: GeneratorAdvMode) -> f64 {
    match mode {
        GeneratorAdvMode::AsWritten => mean_of(d_fake, |f| f * f),
        GeneratorAdvMode::NonSaturating => mean_of(d_fake, |f| (f - 1.0) * (f - 1.0)),
    }
}

/// Log-likelihood discriminator loss `-mean(ln real) - mean(ln(1 - fake))`.
pub fn d_loss_paired<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    same_shape("d_loss_paired", d_real, d_fake)?;
    check_probabilities("d_loss_paired", d_real)?;
    check_probabilities("d_loss_paired", d_fake)?;
    Ok(-mean_of(d_real, clamped_ln) - mean_of(d_fake, |f| clamped_ln(1.0 - f)))
}

pub fn g_loss_paired<T: Scalar>(d_fake: &Tensor<T>, mode: GeneratorAdvMode) -> Result<f64> {
    check_probabilities("g_loss_paired", d_fake)?;
    Ok(match mode {
        GeneratorAdvMode::AsWritten => mean_of(d_fake, |f| clamped_ln(1.0 - f)),
        GeneratorAdvMode::NonSaturating => -mean_of(d_fake, clamped_ln),
    })
}

fn mean_abs_diff<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(op, a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// Mean absolute difference between an image and its round-trip reconstruction.
pub fn cycle_loss<T: Scalar>(x: &Tensor<T>, reconstructed: &Tensor<T>) -> Result<f64> {
    mean_abs_diff("cycle_loss", x, reconstructed)
}

/// Mean absolute difference between a synthesized image and its aligned reference.
pub fn l1_loss<T: Scalar>(reference: &Tensor<T>, synthesized: &Tensor<T>) -> Result<f64> {
    mean_abs_diff("l1_loss", reference, synthesized)
}

/// Weighted generator objective `adv + lambda * cyc + gamma * l1`, with the
/// discriminator fields of the report left at zero.
pub fn total_generator_loss(c: &GeneratorComponents, w: &LossWeights) -> Result<(f64, LossReport)> {
    let total = w.adversarial * (c.adv_unpaired + c.adv_paired) + w.lambda_cyc * (c.cyc_unpaired + c.cyc_paired) + w.gamma_l1 * c.l1_paired;
    let report = LossReport {
        g_adv_unpaired: c.adv_unpaired,
        g_adv_paired: c.adv_paired,
        cyc_unpaired: c.cyc_unpaired,
        cyc_paired: c.cyc_paired,
        l1_paired: c.l1_paired,
        total_g: total,
        ..LossReport::default()
    };
    if let Some(name) = report.first_non_finite() {
        return Err(Error::invalid("total_generator_loss", format!("{name} is not finite")));
    }
    Ok((total, report))
}

/// Tape-recorded versions of the losses. Inputs are assumed shape-checked.
pub mod graph {
    use dualgan_tensor::{Scalar, Tape, Var};

    use super::{GeneratorAdvMode, LOG_EPS};

    fn mean_sq_offset<T: Scalar>(tape: &mut Tape<T>, x: Var, target: f64) -> Var {
        let d = tape.add_scalar(x, -target);
        let sq = tape.square(d);
        tape.mean(sq)
    }

    fn mean_ln<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
        let l = tape.ln_clamped(x, LOG_EPS, 1.0);
        tape.mean(l)
    }

    fn mean_ln_complement<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
        let neg = tape.scale(x, -1.0);
        let c = tape.add_scalar(neg, 1.0);
        mean_ln(tape, c)
    }

    pub fn d_loss_unpaired<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Var {
        let r = mean_sq_offset(tape, d_real, 1.0);
        let f = mean_sq_offset(tape, d_fake, 0.0);
        tape.add(r, f)
    }

    pub fn g_loss_unpaired<T: Scalar>(tape: &mut Tape<T>, d_fake: Var, mode: GeneratorAdvMode) -> Var {
        match mode {
            GeneratorAdvMode::AsWritten => mean_sq_offset(tape, d_fake, 0.0),
            GeneratorAdvMode::NonSaturating => mean_sq_offset(tape, d_fake, 1.0),
        }
    }

    pub fn d_loss_paired<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Var {
        let r = mean_ln(tape, d_real);
        let f = mean_ln_complement(tape, d_fake);
        let s = tape.add(r, f);
        tape.scale(s, -1.0)
    }

    pub fn g_loss_paired<T: Scalar>(tape: &mut Tape<T>, d_fake: Var, mode: GeneratorAdvMode) -> Var {
        match mode {
            GeneratorAdvMode::AsWritten => mean_ln_complement(tape, d_fake),
            GeneratorAdvMode::NonSaturating => {
                let l = mean_ln(tape, d_fake);
                tape.scale(l, -1.0)
            }
        }
    }

    /// Mean absolute difference; serves both cycle and paired L1 terms.
    pub fn mean_abs_diff<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Var {
        let d = tape.sub(a, b);
        let a = tape.abs(d);
        tape.mean(a)
    }
}
