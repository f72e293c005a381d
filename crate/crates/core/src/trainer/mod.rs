//! Alternating unpaired/paired training of the four networks.
//!
//! One iteration runs `n_iter` unpaired steps and then `n_iter` paired steps.
//! Each step updates, in order, the MR discriminator, the CT-to-MR
//! generator, the CT discriminator and the MR-to-CT generator. Unpaired
//! steps use least-squares adversarial terms and cycle consistency; paired
//! steps use conditional log-likelihood adversarial terms, cycle consistency
//! and an L1 term against the aligned reference. Every update uses Adam with
//! the learning rate of the current iteration.

mod adam;
mod checkpoint;
mod log;
mod run;

use std::fmt;

use dualgan_tensor::{Bound, ParamSet, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{init_rng, Discriminator, DiscriminatorSpec, Generator, GeneratorConfig, InputKind, LossKind};
use crate::objectives::{graph, total_generator_loss, GeneratorComponents, LossReport, LossWeights};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use log::{csv_header, csv_row, TrainingLog};
pub use run::{translate, RunDir, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Initial Adam learning rate.
    pub alpha: f64,
    pub batch_size: usize,
    /// Inner steps per loop and iteration.
    pub n_iter: usize,
    pub total_iterations: u64,
    /// Iteration at which linear decay to zero begins.
    pub decay_start: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Checkpoint period in iterations; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
    /// Sample-grid period in iterations; 0 disables samples.
    pub sample_every: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 2e-4,
            batch_size: 1,
            n_iter: 1,
            total_iterations: 300_000,
            decay_start: 100_000,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_every: 5_000,
            sample_every: 1_000,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("train config", r));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.n_iter == 0 {
            return bad("batch_size and n_iter must be at least 1".into());
        }
        if self.decay_start > self.total_iterations {
            return bad(format!("decay_start {} exceeds total_iterations {}", self.decay_start, self.total_iterations));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        Ok(())
    }
}

/// Learning rate for iteration `t`: constant until `decay_start`, then
/// linear to zero at `total_iterations`.
pub fn lr_at(t: u64, cfg: &TrainConfig) -> Result<f64> {
    if t > cfg.total_iterations {
        return Err(Error::invalid("lr_at", format!("iteration {t} beyond total {}", cfg.total_iterations)));
    }
    if t < cfg.decay_start {
        return Ok(cfg.alpha);
    }
    let window = cfg.total_iterations - cfg.decay_start;
    if window == 0 {
        return Ok(0.0);
    }
    Ok(cfg.alpha * ((cfg.total_iterations - t) as f64 / window as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetworkId {
    SynMr,
    SynCt,
    DisMr,
    DisCt,
}

impl NetworkId {
    pub const ALL: [NetworkId; 4] = [NetworkId::SynMr, NetworkId::SynCt, NetworkId::DisMr, NetworkId::DisCt];

    pub fn key(self) -> &'static str {
        match self {
            NetworkId::SynMr => "syn_mr",
            NetworkId::SynCt => "syn_ct",
            NetworkId::DisMr => "dis_mr",
            NetworkId::DisCt => "dis_ct",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkId::SynMr => "Syn_MR",
            NetworkId::SynCt => "Syn_CT",
            NetworkId::DisMr => "Dis_MR",
            NetworkId::DisCt => "Dis_CT",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Unpaired,
    Paired,
}

/// One parameter update, as recorded in a step trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateEvent {
    pub phase: Phase,
    /// Inner step index within the phase.
    pub inner: usize,
    pub network: NetworkId,
}

/// CT (domain A) and MR (domain B) tensors of shape `[m, 1, h, w]` on
/// [-1, 1]. Aligned for paired batches, independent for unpaired ones.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch<T> {
    pub ct: Tensor<T>,
    pub mr: Tensor<T>,
}

/// The two generators and two discriminators.
#[derive(Clone, Debug)]
pub struct Networks<T> {
    pub syn_mr: Generator<T>,
    pub syn_ct: Generator<T>,
    pub dis_mr: Discriminator<T>,
    pub dis_ct: Discriminator<T>,
}

impl<T: Scalar> Networks<T> {
    pub fn new(generator: &GeneratorConfig, discriminator: &DiscriminatorSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            syn_mr: Generator::new(generator, &mut init_rng(seed, 0))?,
            syn_ct: Generator::new(generator, &mut init_rng(seed, 1))?,
            dis_mr: Discriminator::new(discriminator, &mut init_rng(seed, 2))?,
            dis_ct: Discriminator::new(discriminator, &mut init_rng(seed, 3))?,
        })
    }

    pub fn params(&self, id: NetworkId) -> &ParamSet<T> {
        match id {
            NetworkId::SynMr => self.syn_mr.params(),
            NetworkId::SynCt => self.syn_ct.params(),
            NetworkId::DisMr => self.dis_mr.params(),
            NetworkId::DisCt => self.dis_ct.params(),
        }
    }

    pub fn params_mut(&mut self, id: NetworkId) -> &mut ParamSet<T> {
        match id {
            NetworkId::SynMr => self.syn_mr.params_mut(),
            NetworkId::SynCt => self.syn_ct.params_mut(),
            NetworkId::DisMr => self.dis_mr.params_mut(),
            NetworkId::DisCt => self.dis_ct.params_mut(),
        }
    }
}

/// Result of one training iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Iteration number just completed (1-based).
    pub iteration: u64,
    pub lr: f64,
    pub report: LossReport,
    pub trace: Vec<UpdateEvent>,
}

/// Translation direction of a generator update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    CtToMr,
    MrToCt,
}

impl Direction {
    fn generator(self) -> NetworkId {
        match self {
            Direction::CtToMr => NetworkId::SynMr,
            Direction::MrToCt => NetworkId::SynCt,
        }
    }

    fn discriminator(self) -> NetworkId {
        match self {
            Direction::CtToMr => NetworkId::DisMr,
            Direction::MrToCt => NetworkId::DisCt,
        }
    }

    /// `(source, target)` of a batch for this direction.
    fn split<T>(self, batch: &DomainBatch<T>) -> (&Tensor<T>, &Tensor<T>) {
        match self {
            Direction::CtToMr => (&batch.ct, &batch.mr),
            Direction::MrToCt => (&batch.mr, &batch.ct),
        }
    }
}

/// Generator-side loss values of one update, unweighted.
#[derive(Clone, Copy, Debug, Default)]
struct GeneratorTerms {
    adv: f64,
    cyc: f64,
    l1: f64,
}

/// Parameters, optimizer moments and iteration counter. Data order and
/// augmentation are addressed by `(seed, iteration)`, so this is the whole
/// resumable state.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub iteration: u64,
    pub seed: u64,
    pub networks: Networks<T>,
    pub optimizers: [Adam<T>; 4],
}

fn scalar_of<T: Scalar>(tape: &Tape<T>, v: Var) -> f64 {
    tape.value(v).item().as_f64()
}

impl<T: Scalar> TrainState<T> {
    pub fn new(generator: &GeneratorConfig, discriminator: &DiscriminatorSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let networks = Networks::new(generator, discriminator, cfg.seed)?;
        let optimizers = NetworkId::ALL.map(|id| Adam::new(networks.params(id), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps));
        Ok(Self { iteration: 0, seed: cfg.seed, networks, optimizers })
    }

    fn apply(&mut self, id: NetworkId, tape: &Tape<T>, loss: Var, bound: &Bound, lr: f64) {
        let mut grads = tape.backward(loss);
        let grads = self.networks.params(id).gradients(&mut grads, bound);
        self.optimizers[id.index()].update(self.networks.params_mut(id), &grads, lr);
    }

    fn generator(&self, id: NetworkId) -> &Generator<T> {
        match id {
            NetworkId::SynMr => &self.networks.syn_mr,
            NetworkId::SynCt => &self.networks.syn_ct,
            _ => unreachable!("not a generator"),
        }
    }

    fn discriminator(&self, id: NetworkId) -> &Discriminator<T> {
        match id {
            NetworkId::DisMr => &self.networks.dis_mr,
            NetworkId::DisCt => &self.networks.dis_ct,
            _ => unreachable!("not a discriminator"),
        }
    }

    fn update_discriminator(&mut self, dir: Direction, phase: Phase, batch: &DomainBatch<T>, lr: f64, w: &LossWeights) -> Result<f64> {
        let (source, target) = dir.split(batch);
        let fake = self.generator(dir.generator()).translate(source)?;
        let id = dir.discriminator();
        let disc = self.discriminator(id);
        let mut tape = Tape::new();
        let bound = disc.params().bind(&mut tape, true);
        let real = tape.constant(target.clone());
        let fake = tape.constant(fake);
        let loss = match phase {
            Phase::Unpaired => {
                let d_real = disc.forward(&mut tape, &bound, real, InputKind::Unpaired, LossKind::LeastSquares)?;
                let d_fake = disc.forward(&mut tape, &bound, fake, InputKind::Unpaired, LossKind::LeastSquares)?;
                graph::d_loss_unpaired(&mut tape, d_real, d_fake)
            }
            Phase::Paired => {
                let cond = tape.constant(source.clone());
                let real_pair = tape.concat_channels(cond, real);
                let fake_pair = tape.concat_channels(cond, fake);
                let d_real = disc.forward(&mut tape, &bound, real_pair, InputKind::Paired, LossKind::Nll)?;
                let d_fake = disc.forward(&mut tape, &bound, fake_pair, InputKind::Paired, LossKind::Nll)?;
                graph::d_loss_paired(&mut tape, d_real, d_fake)
            }
        };
        let value = scalar_of(&tape, loss);
        let weighted = tape.scale(loss, w.adversarial);
        self.apply(id, &tape, weighted, &bound, lr);
        Ok(value)
    }

    fn update_generator(&mut self, dir: Direction, phase: Phase, batch: &DomainBatch<T>, lr: f64, w: &LossWeights) -> Result<GeneratorTerms> {
        let (source, target) = dir.split(batch);
        let id = dir.generator();
        let back_id = match id {
            NetworkId::SynMr => NetworkId::SynCt,
            _ => NetworkId::SynMr,
        };
        let (gen, back, disc) = (self.generator(id), self.generator(back_id), self.discriminator(dir.discriminator()));
        let mut tape = Tape::new();
        let bound = gen.params().bind(&mut tape, true);
        let back_bound = back.params().bind(&mut tape, false);
        let disc_bound = disc.params().bind(&mut tape, false);
        let x = tape.constant(source.clone());
        let fake = gen.forward(&mut tape, &bound, x);
        let adv = match phase {
            Phase::Unpaired => {
                let score = disc.forward(&mut tape, &disc_bound, fake, InputKind::Unpaired, LossKind::LeastSquares)?;
                graph::g_loss_unpaired(&mut tape, score, w.generator_adv_mode)
            }
            Phase::Paired => {
                let pair = tape.concat_channels(x, fake);
                let score = disc.forward(&mut tape, &disc_bound, pair, InputKind::Paired, LossKind::Nll)?;
                graph::g_loss_paired(&mut tape, score, w.generator_adv_mode)
            }
        };
        let rec = back.forward(&mut tape, &back_bound, fake);
        let cyc = graph::mean_abs_diff(&mut tape, rec, x);
        let weighted_adv = tape.scale(adv, w.adversarial);
        let weighted_cyc = tape.scale(cyc, w.lambda_cyc);
        let mut loss = tape.add(weighted_adv, weighted_cyc);
        let mut terms = GeneratorTerms { adv: scalar_of(&tape, adv), cyc: scalar_of(&tape, cyc), l1: 0.0 };
        if phase == Phase::Paired {
            let y = tape.constant(target.clone());
            let l1 = graph::mean_abs_diff(&mut tape, y, fake);
            terms.l1 = scalar_of(&tape, l1);
            let weighted_l1 = tape.scale(l1, w.gamma_l1);
            loss = tape.add(loss, weighted_l1);
        }
        self.apply(id, &tape, loss, &bound, lr);
        Ok(terms)
    }

    /// Runs one iteration: `unpaired.len()` unpaired steps followed by
    /// `paired.len()` paired steps (either may be empty).
    pub fn train_step(
        &mut self,
        unpaired: &[DomainBatch<T>],
        paired: &[DomainBatch<T>],
        cfg: &TrainConfig,
        weights: &LossWeights,
    ) -> Result<StepOutcome> {
        if unpaired.is_empty() && paired.is_empty() {
            return Err(Error::Empty("training batches"));
        }
        let lr = lr_at(self.iteration, cfg)?;
        let mut trace = Vec::with_capacity(4 * (unpaired.len() + paired.len()));
        let mut sums = LossReport::default();
        let mut components = GeneratorComponents::default();
        for (phase, batches) in [(Phase::Unpaired, unpaired), (Phase::Paired, paired)] {
            for (inner, batch) in batches.iter().enumerate() {
                let scale = 1.0 / batches.len() as f64;
                let mut event = |network| trace.push(UpdateEvent { phase, inner, network });
                event(NetworkId::DisMr);
                let d_mr = self.update_discriminator(Direction::CtToMr, phase, batch, lr, weights)?;
                event(NetworkId::SynMr);
                let g_mr = self.update_generator(Direction::CtToMr, phase, batch, lr, weights)?;
                event(NetworkId::DisCt);
                let d_ct = self.update_discriminator(Direction::MrToCt, phase, batch, lr, weights)?;
                event(NetworkId::SynCt);
                let g_ct = self.update_generator(Direction::MrToCt, phase, batch, lr, weights)?;
                let adv = (g_mr.adv + g_ct.adv) * scale;
                let cyc = (g_mr.cyc + g_ct.cyc) * scale;
                match phase {
                    Phase::Unpaired => {
                        sums.d_mr_unpaired += d_mr * scale;
                        sums.d_ct_unpaired += d_ct * scale;
                        components.adv_unpaired += adv;
                        components.cyc_unpaired += cyc;
                    }
                    Phase::Paired => {
                        sums.d_mr_paired += d_mr * scale;
                        sums.d_ct_paired += d_ct * scale;
                        components.adv_paired += adv;
                        components.cyc_paired += cyc;
                        components.l1_paired += (g_mr.l1 + g_ct.l1) * scale;
                    }
                }
            }
        }
        self.iteration += 1;
        let non_finite = |report: &LossReport| Error::NonFinite { iteration: self.iteration, report: report.to_string() };
        let report = match total_generator_loss(&components, weights) {
            Ok((_, g)) => LossReport {
                d_mr_unpaired: sums.d_mr_unpaired,
                d_ct_unpaired: sums.d_ct_unpaired,
                d_mr_paired: sums.d_mr_paired,
                d_ct_paired: sums.d_ct_paired,
                ..g
            },
            Err(_) => {
                let total = components.adv_unpaired + components.adv_paired;
                return Err(non_finite(&LossReport {
                    g_adv_unpaired: components.adv_unpaired,
                    g_adv_paired: components.adv_paired,
                    cyc_unpaired: components.cyc_unpaired,
                    cyc_paired: components.cyc_paired,
                    l1_paired: components.l1_paired,
                    total_g: total,
                    ..sums
                }));
            }
        };
        if report.first_non_finite().is_some() {
            return Err(non_finite(&report));
        }
        Ok(StepOutcome { iteration: self.iteration, lr, report, trace })
    }
}
