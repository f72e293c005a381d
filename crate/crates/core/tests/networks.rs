use dualgan_core::networks::{init_rng, Discriminator, DiscriminatorSpec, Generator, GeneratorConfig, InputKind, LossKind, DISCRIMINATOR_NAMES};
use dualgan_tensor::Tensor;

fn small_generator(seed: u64) -> Generator<f32> {
    Generator::new(&GeneratorConfig { base_width: 4, num_residual_blocks: 1 }, &mut init_rng(seed, 0)).unwrap()
}

fn input(size: usize, n: usize) -> Tensor<f32> {
    let data = (0..n * size * size).map(|i| ((i * 29) % 200) as f32 / 100.0 - 1.0).collect();
    Tensor::from_vec([n, 1, size, size], data).unwrap()
}

#[test]
fn generator_preserves_shape_and_range() {
    let g = small_generator(1);
    let out = g.translate(&input(32, 2)).unwrap();
    assert_eq!(out.shape(), [2, 1, 32, 32]);
    assert!(out.data().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
}

#[test]
fn generator_rejects_bad_inputs() {
    let g = small_generator(1);
    assert!(g.translate(&input(30, 1)).is_err());
    assert!(g.translate(&Tensor::zeros([1, 2, 32, 32])).is_err());
}

#[test]
fn zeroed_output_layer_gives_zero_image() {
    let mut g = small_generator(2);
    let (w, b) = g.output_layer();
    for idx in [w, b] {
        g.params_mut().tensor_mut(idx).data_mut().fill(0.0);
    }
    let out = g.translate(&input(16, 1)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn initialization_is_seeded() {
    let (a, b, c) = (small_generator(3), small_generator(3), small_generator(4));
    assert_eq!(a.params().tensor(0), b.params().tensor(0));
    assert_ne!(a.params().tensor(0), c.params().tensor(0));
}

#[test]
fn paired_and_unpaired_maps_share_a_size() {
    for name in DISCRIMINATOR_NAMES {
        let spec = DiscriminatorSpec::preset(name).unwrap().narrowed(16);
        let d = Discriminator::<f32>::new(&spec, &mut init_rng(0, 2)).unwrap();
        for loss in [LossKind::LeastSquares, LossKind::Nll] {
            let u = d.score(&input(128, 1), InputKind::Unpaired, loss).unwrap();
            let p = d.score(&Tensor::zeros([1, 2, 128, 128]), InputKind::Paired, loss).unwrap();
            assert_eq!(u.shape(), p.shape(), "{name} {loss}");
            assert_eq!(u.shape()[1], 1);
            let expected = spec.patch_map_size(InputKind::Unpaired, loss, 128).unwrap();
            assert_eq!(u.shape()[2], expected, "{name} {loss}");
            if loss == LossKind::Nll {
                assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

#[test]
fn trunk_parameters_are_shared_between_paths() {
    let spec = DiscriminatorSpec::preset("D1").unwrap().narrowed(16);
    let mut d = Discriminator::<f32>::new(&spec, &mut init_rng(0, 2)).unwrap();
    let before_u = d.score(&input(64, 1), InputKind::Unpaired, LossKind::LeastSquares).unwrap();
    let before_p = d.score(&Tensor::zeros([1, 2, 64, 64]), InputKind::Paired, LossKind::Nll).unwrap();
    let trunk = d.trunk_param_indices();
    assert!(!trunk.is_empty());
    assert!(trunk.iter().all(|&i| d.params().name(i).starts_with("trunk.")));
    for &i in &trunk {
        d.params_mut().tensor_mut(i).data_mut().iter_mut().enumerate().for_each(|(k, v)| *v += (k % 7) as f32 * 0.01);
    }
    assert_ne!(d.score(&input(64, 1), InputKind::Unpaired, LossKind::LeastSquares).unwrap(), before_u);
    assert_ne!(d.score(&Tensor::zeros([1, 2, 64, 64]), InputKind::Paired, LossKind::Nll).unwrap(), before_p);
}

#[test]
fn channel_count_must_match_path() {
    let spec = DiscriminatorSpec::preset("D1").unwrap().narrowed(16);
    let d = Discriminator::<f32>::new(&spec, &mut init_rng(0, 2)).unwrap();
    assert!(d.score(&input(64, 1), InputKind::Paired, LossKind::Nll).is_err());
    assert!(d.score(&Tensor::zeros([1, 2, 64, 64]), InputKind::Unpaired, LossKind::Nll).is_err());
}

#[test]
fn missing_head_or_tail_is_an_error() {
    let mut spec = DiscriminatorSpec::preset("D1").unwrap().narrowed(16);
    spec.head_paired = None;
    let d = Discriminator::<f32>::new(&spec, &mut init_rng(0, 2)).unwrap();
    assert!(d.score(&Tensor::zeros([1, 2, 64, 64]), InputKind::Paired, LossKind::Nll).is_err());
    assert!(d.score(&input(64, 1), InputKind::Unpaired, LossKind::Nll).is_ok());

    let mut spec = DiscriminatorSpec::preset("D1").unwrap().narrowed(16);
    spec.tail_nll = None;
    let d = Discriminator::<f32>::new(&spec, &mut init_rng(0, 2)).unwrap();
    assert!(d.score(&input(64, 1), InputKind::Unpaired, LossKind::Nll).is_err());
}

#[test]
fn unknown_preset_lists_valid_names() {
    let err = DiscriminatorSpec::preset("D9").unwrap_err().to_string();
    assert!(err.contains("D1, D2, D3, D4, D5"), "{err}");
}
