use dualgan_core::config::RunConfig;
use dualgan_core::data::DataPools;
use dualgan_core::networks::GeneratorConfig;
use dualgan_core::objectives::LossReport;
use dualgan_core::objectives::LossWeights;
use dualgan_core::phantom::{generate_phantom, PhantomSpec};
use dualgan_core::trainer::{csv_header, lr_at, NetworkId, Phase, RunDir, TrainConfig, Trainer, TrainingLog};
use dualgan_tensor::ParamSet;

fn pools(dir: &std::path::Path, paired: usize) -> DataPools {
    let spec = PhantomSpec { seed: 3, num_paired: paired, num_unpaired_a: 3, num_unpaired_b: 3, slice_size: 32, shape_complexity: 3 };
    DataPools::from_manifest(&generate_phantom(&spec, dir).unwrap()).unwrap()
}

fn config() -> RunConfig {
    let mut cfg = RunConfig::default_for_size(32);
    cfg.generator = GeneratorConfig { base_width: 4, num_residual_blocks: 1 };
    cfg.discriminator.name = "D5".into();
    cfg.discriminator.width_divisor = 16;
    cfg.train.total_iterations = 20;
    cfg.train.decay_start = 10;
    cfg.train.checkpoint_every = 2;
    cfg.train.sample_every = 3;
    cfg
}

fn snapshot(t: &Trainer) -> Vec<ParamSet<f32>> {
    NetworkId::ALL.iter().map(|&id| t.state.networks.params(id).clone()).collect()
}

fn changed(before: &[ParamSet<f32>], t: &Trainer) -> Vec<bool> {
    NetworkId::ALL
        .iter()
        .zip(before)
        .map(|(&id, old)| {
            let new = t.state.networks.params(id);
            (0..old.len()).any(|i| old.tensor(i) != new.tensor(i))
        })
        .collect()
}

fn trainer_with(weights: LossWeights) -> Trainer {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.loss = weights;
    Trainer::with_pools(cfg, pools(dir.path(), 2)).unwrap()
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let mut t = trainer_with(LossWeights { lambda_cyc: 0.0, gamma_l1: 0.0, adversarial: 0.0, ..Default::default() });
    let before = snapshot(&t);
    t.step().unwrap();
    assert_eq!(changed(&before, &t), vec![false; 4]);
}

#[test]
fn reconstruction_terms_only_move_generators() {
    let mut t = trainer_with(LossWeights { adversarial: 0.0, ..Default::default() });
    let before = snapshot(&t);
    t.step().unwrap();
    let moved = changed(&before, &t);
    for (id, m) in NetworkId::ALL.iter().zip(moved) {
        let is_generator = matches!(id, NetworkId::SynMr | NetworkId::SynCt);
        assert_eq!(m, is_generator, "{id}");
    }
}

#[test]
fn default_weights_move_every_network() {
    let mut t = trainer_with(LossWeights::default());
    let before = snapshot(&t);
    let outcome = t.step().unwrap();
    assert_eq!(changed(&before, &t), vec![true; 4]);
    assert!(outcome.report.first_non_finite().is_none());
    assert_eq!(outcome.iteration, 1);
    assert_eq!(t.state.iteration, 1);
}

#[test]
fn without_paired_data_only_the_unpaired_loop_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.loss.gamma_l1 = 0.0;
    let mut t = Trainer::with_pools(cfg, pools(dir.path(), 0)).unwrap();
    assert!(!t.runs_paired());
    let outcome = t.step().unwrap();
    assert_eq!(outcome.trace.len(), 4);
    assert!(outcome.trace.iter().all(|e| e.phase == Phase::Unpaired));
    assert_eq!(outcome.report.l1_paired, 0.0);
    assert!(t.sample_grid().is_ok());
}

#[test]
fn mismatched_slice_size_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.slice_size = 64;
    assert!(Trainer::with_pools(cfg, pools(dir.path(), 1)).is_err());
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig { alpha: 1.0, total_iterations: 10, decay_start: 4, ..Default::default() };
    assert_eq!(lr_at(0, &cfg).unwrap(), 1.0);
    assert_eq!(lr_at(3, &cfg).unwrap(), 1.0);
    assert_eq!(lr_at(4, &cfg).unwrap(), 1.0);
    assert_eq!(lr_at(7, &cfg).unwrap(), 0.5);
    assert_eq!(lr_at(10, &cfg).unwrap(), 0.0);
    assert!(lr_at(11, &cfg).is_err());
}

#[test]
fn run_directory_collects_artifacts() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut t = Trainer::with_pools(config(), pools(data.path(), 2)).unwrap();
    let mut dir = RunDir::create(out.path(), &t.config, None).unwrap();
    let mut seen = 0;
    t.run(5, Some(&mut dir), |_| seen += 1).unwrap();
    assert_eq!(seen, 5);
    let log = std::fs::read_to_string(out.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert_eq!(log.lines().next().unwrap(), csv_header());
    for it in [2, 4, 5] {
        assert!(dir.checkpoint_path(it).exists(), "checkpoint {it}");
    }
    assert!(!dir.checkpoint_path(3).exists());
    assert!(dir.latest_checkpoint().exists());
    assert!(out.path().join("samples/iter_0000003.pgm").exists());
    let echo = std::fs::read_to_string(out.path().join("config-echo")).unwrap();
    assert_eq!(RunConfig::from_toml(&echo).unwrap(), t.config);
    assert!(t.run(21, None, |_| {}).is_err());
}

#[test]
fn resumed_log_drops_rows_after_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let mut log = TrainingLog::open(&path, None).unwrap();
    for it in 1..=6 {
        log.append(it, 0.1, &LossReport::default()).unwrap();
    }
    log.flush().unwrap();
    drop(log);
    let mut log = TrainingLog::open(&path, Some(4)).unwrap();
    log.append(5, 0.2, &LossReport::default()).unwrap();
    log.flush().unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let iters: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters, ["1", "2", "3", "4", "5"]);
    assert!(text.lines().last().unwrap().starts_with("5,0.2,"));
}

#[test]
fn resume_rejects_a_different_seed() {
    let data = tempfile::tempdir().unwrap();
    let mut t = Trainer::with_pools(config(), pools(data.path(), 1)).unwrap();
    t.step().unwrap();
    let ckpt = data.path().join("a.ckpt");
    t.save_checkpoint(&ckpt).unwrap();
    let mut cfg = config();
    cfg.train.seed = 99;
    let mut other = Trainer::with_pools(cfg, t.pools().clone()).unwrap();
    assert!(other.resume(&ckpt).is_err());
    let mut same = Trainer::with_pools(config(), t.pools().clone()).unwrap();
    same.resume(&ckpt).unwrap();
    assert_eq!(same.state.iteration, 1);
}
