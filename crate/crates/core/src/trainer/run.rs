use std::fs;
use std::path::{Path, PathBuf};

use dualgan_tensor::Tensor;

use super::{lr_at, Checkpoint, DomainBatch, StepOutcome, TrainState, TrainingLog};
use crate::config::RunConfig;
use crate::data::{from_network, to_network, BatchSampler, DataPools};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::manifest::DatasetManifest;

/// Artifacts of a training run: `config-echo`, `log.csv`, `checkpoints/`
/// and `samples/`.
#[derive(Debug)]
pub struct RunDir {
    pub root: PathBuf,
    log: TrainingLog,
}

impl RunDir {
    /// Creates the layout and writes the config echo. With `resume_at`, log
    /// rows after that iteration are dropped.
    pub fn create(root: &Path, config: &RunConfig, resume_at: Option<u64>) -> Result<Self> {
        for dir in [root.to_path_buf(), root.join("checkpoints"), root.join("samples")] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let echo = root.join("config-echo");
        fs::write(&echo, config.to_toml()).map_err(|e| Error::io(&echo, e))?;
        let log = TrainingLog::open(&root.join("log.csv"), resume_at)?;
        Ok(Self { root: root.to_path_buf(), log })
    }

    pub fn checkpoint_path(&self, iteration: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("iter_{iteration:07}.ckpt"))
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.ckpt")
    }
}

/// Drives training from a configuration: owns the state, the data pools
/// and the deterministic batch sampler.
#[derive(Debug)]
pub struct Trainer {
    pub config: RunConfig,
    pub state: TrainState<f32>,
    pools: DataPools,
    sampler: BatchSampler,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate(true)?;
        let manifest = DatasetManifest::read(&config.data.manifest)?;
        let pools = DataPools::from_manifest(&manifest)?;
        Self::with_pools(config, pools)
    }

    pub fn with_pools(config: RunConfig, pools: DataPools) -> Result<Self> {
        config.validate(false)?;
        if let Some(size) = pools.slice_size() {
            if size != config.slice_size {
                return Err(Error::Config(format!("data slices are {size} pixels, config slice_size is {}", config.slice_size)));
            }
        }
        let state = TrainState::new(&config.generator, &config.discriminator_spec()?, &config.train)?;
        let sampler = BatchSampler::new(&pools, config.train.seed, config.train.augment);
        let trainer = Self { config, state, pools, sampler };
        if !trainer.runs_unpaired() && !trainer.runs_paired() {
            return Err(Error::Empty("training pools for the enabled loops"));
        }
        Ok(trainer)
    }

    pub fn pools(&self) -> &DataPools {
        &self.pools
    }

    pub fn runs_unpaired(&self) -> bool {
        self.config.data.use_unpaired && !self.pools.unpaired_a.is_empty() && !self.pools.unpaired_b.is_empty()
    }

    pub fn runs_paired(&self) -> bool {
        self.config.data.use_paired && !self.pools.paired.is_empty()
    }

    /// Batches consumed by the given iteration (0-based).
    #[allow(clippy::type_complexity)]
    pub fn batches(&mut self, iteration: u64) -> Result<(Vec<DomainBatch<f32>>, Vec<DomainBatch<f32>>)> {
        let (m, n_iter) = (self.config.train.batch_size, self.config.train.n_iter);
        let mut unpaired = Vec::new();
        let mut paired = Vec::new();
        for j in 0..n_iter as u64 {
            let draw = iteration * n_iter as u64 + j;
            if self.runs_unpaired() {
                let (a, b) = self.sampler.next_unpaired_batch(&self.pools, m, draw)?;
                unpaired.push(DomainBatch { ct: to_network(&a.iter().collect::<Vec<_>>())?, mr: to_network(&b.iter().collect::<Vec<_>>())? });
            }
            if self.runs_paired() {
                let pairs = self.sampler.next_paired_batch(&self.pools, m, draw)?;
                let ct: Vec<&Image> = pairs.iter().map(|(a, _)| a).collect();
                let mr: Vec<&Image> = pairs.iter().map(|(_, b)| b).collect();
                paired.push(DomainBatch { ct: to_network(&ct)?, mr: to_network(&mr)? });
            }
        }
        Ok((unpaired, paired))
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let (unpaired, paired) = self.batches(self.state.iteration)?;
        self.state.train_step(&unpaired, &paired, &self.config.train, &self.config.loss)
    }

    /// Trains until `until` iterations are complete, logging, checkpointing
    /// and sampling into `dir` when given.
    pub fn run(&mut self, until: u64, mut dir: Option<&mut RunDir>, mut on_step: impl FnMut(&StepOutcome)) -> Result<()> {
        if until > self.config.train.total_iterations {
            return Err(Error::Config(format!("{until} iterations exceed train.total_iterations {}", self.config.train.total_iterations)));
        }
        while self.state.iteration < until {
            let outcome = self.step()?;
            let it = outcome.iteration;
            if let Some(dir) = dir.as_deref_mut() {
                dir.log.append(it, outcome.lr, &outcome.report)?;
                let every = self.config.train.checkpoint_every;
                if (every > 0 && it % every == 0) || it == until {
                    dir.log.flush()?;
                    self.save_checkpoint(&dir.checkpoint_path(it))?;
                    self.save_checkpoint(&dir.latest_checkpoint())?;
                }
                let every = self.config.train.sample_every;
                if every > 0 && it % every == 0 {
                    let path = dir.root.join("samples").join(format!("iter_{it:07}.pgm"));
                    self.sample_grid()?.write_pgm(&path)?;
                }
            }
            on_step(&outcome);
        }
        if let Some(dir) = dir {
            dir.log.flush()?;
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.state.to_checkpoint(&self.config.to_toml()).save(path)
    }

    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint::load(path)?;
        self.state.restore(&ckpt, path)?;
        if self.state.seed != self.config.train.seed {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("seed {} differs from configured seed {}", self.state.seed, self.config.train.seed),
            });
        }
        lr_at(self.state.iteration, &self.config.train)?;
        Ok(())
    }

    /// CT-to-MR translation of one 8-bit-scale slice.
    pub fn translate_ct(&self, image: &Image) -> Result<Image> {
        translate(&self.state.networks.syn_mr, image)
    }

    /// `[CT | synthesized MR | reference MR]` for the first paired slice, or
    /// `[CT | synthesized MR | reconstructed CT]` without paired data.
    pub fn sample_grid(&self) -> Result<Image> {
        let nets = &self.state.networks;
        let (ct, third) = match self.pools.paired.first() {
            Some(s) => (s.image_a.clone().expect("paired"), s.image_b.clone()),
            None => (self.pools.unpaired_a.first().and_then(|s| s.image_a.clone()).ok_or(Error::Empty("sample pool"))?, None),
        };
        let fake = translate(&nets.syn_mr, &ct)?;
        let third = match third {
            Some(mr) => mr,
            None => translate(&nets.syn_ct, &fake)?,
        };
        Image::hstack(&[&ct, &fake.quantized(), &third])
    }
}

/// Runs a generator over one slice and returns 8-bit-scale output
/// (clamped, not rounded).
pub fn translate(generator: &crate::networks::Generator<f32>, image: &Image) -> Result<Image> {
    let input: Tensor<f32> = to_network(&[image])?;
    let out = generator.translate(&input)?;
    Ok(from_network(&out).pop().expect("one output"))
}
