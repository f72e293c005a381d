use dualgan_core::data::{
    augment, draw_params, from_network, pad_for, to_network, AugmentParams, BatchSampler, DataPools, EpochSampler, SamplingGrid, SliceSample,
    MAX_ROTATION_DEG,
};
use dualgan_core::image::Image;
use dualgan_core::manifest::DatasetManifest;
use dualgan_core::phantom::{generate_phantom, PhantomSpec};
use dualgan_core::rng::{stream_rng, Stream};
use proptest::prelude::*;

fn ramp(size: usize) -> Image {
    Image::from_vec(size, size, (0..size * size).map(|i| (i % 256) as f32).collect()).unwrap()
}

fn phantom_pools(dir: &std::path::Path) -> DataPools {
    let spec = PhantomSpec { seed: 2, num_paired: 3, num_unpaired_a: 4, num_unpaired_b: 5, slice_size: 32, shape_complexity: 3 };
    generate_phantom(&spec, dir).unwrap();
    DataPools::from_manifest(&DatasetManifest::read(&dir.join("manifest.txt")).unwrap()).unwrap()
}

#[test]
fn identity_params_leave_slice_unchanged() {
    let img = ramp(32);
    let out = SamplingGrid::new(32, &AugmentParams::identity(32)).unwrap().apply(&img).unwrap();
    assert_eq!(out, img);
}

#[test]
fn invalid_params_are_rejected() {
    let mut p = AugmentParams::identity(64);
    p.rotation_deg = 6.0;
    assert!(p.validate(64).is_err());
    let mut p = AugmentParams::identity(64);
    p.crop_offset = (2 * pad_for(64) + 1, 0);
    assert!(p.validate(64).is_err());
}

#[test]
fn pairs_share_geometry() {
    let a = ramp(32);
    let b = Image::from_vec(32, 32, a.data.iter().map(|v| 255.0 - v).collect()).unwrap();
    let sample = SliceSample::paired(a.clone(), b.clone(), "p").unwrap();
    for k in 0..20 {
        let params = draw_params(&mut stream_rng(9, Stream::AugmentPaired, k), 32);
        let out = augment(&sample, &params).unwrap();
        let alone_a = augment(&SliceSample::unpaired_a(a.clone()), &params).unwrap();
        let alone_b = augment(&SliceSample::unpaired_b(b.clone()), &params).unwrap();
        assert_eq!(out.image_a, alone_a.image_a);
        assert_eq!(out.image_b, alone_b.image_b);
        assert_eq!(out.pair_id.as_deref(), Some("p"));
    }
}

#[test]
fn unpaired_flip_draws_are_uncorrelated() {
    let n = 10_000u64;
    let flips = |stream| -> Vec<f64> { (0..n).map(|k| draw_params(&mut stream_rng(4, stream, k), 64).flip as u8 as f64).collect() };
    let (a, b) = (flips(Stream::AugmentA), flips(Stream::AugmentB));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let var_a: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let var_b: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let corr = cov / (var_a * var_b).sqrt();
    assert!(corr.abs() < 0.05, "correlation {corr}");
}

#[test]
fn epoch_sampler_visits_each_index_once_per_epoch() {
    let mut s = EpochSampler::new(7, 3, Stream::ShuffleA).unwrap();
    for epoch in 0..4u64 {
        let mut seen: Vec<usize> = (0..7).map(|i| s.index(epoch * 7 + i)).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }
    assert!(EpochSampler::new(0, 3, Stream::ShuffleA).is_err());
}

#[test]
fn epoch_sampler_is_random_access() {
    let mut forward = EpochSampler::new(5, 1, Stream::ShuffleB).unwrap();
    let seq: Vec<usize> = (0..20).map(|k| forward.index(k)).collect();
    let mut jumping = EpochSampler::new(5, 1, Stream::ShuffleB).unwrap();
    for k in (0..20).rev() {
        assert_eq!(jumping.index(k), seq[k as usize]);
    }
}

#[test]
fn batches_have_expected_shapes_and_range() {
    let dir = tempfile::tempdir().unwrap();
    let pools = phantom_pools(dir.path());
    assert_eq!((pools.unpaired_a.len(), pools.unpaired_b.len(), pools.paired.len()), (4, 5, 3));
    assert_eq!(pools.slice_size(), Some(32));
    let mut sampler = BatchSampler::new(&pools, 1, true);
    for draw in 0..6 {
        let (a, b) = sampler.next_unpaired_batch(&pools, 2, draw).unwrap();
        let pairs = sampler.next_paired_batch(&pools, 2, draw).unwrap();
        let images = a.iter().chain(&b).chain(pairs.iter().flat_map(|(x, y)| [x, y]));
        for img in images {
            assert_eq!(img.dims(), (32, 32));
            assert!(img.data.iter().all(|v| (0.0..=255.0).contains(v)));
        }
    }
}

#[test]
fn batches_depend_only_on_draw_counter() {
    let dir = tempfile::tempdir().unwrap();
    let pools = phantom_pools(dir.path());
    let mut first = BatchSampler::new(&pools, 8, true);
    let mut second = BatchSampler::new(&pools, 8, true);
    let early = first.next_unpaired_batch(&pools, 1, 3).unwrap();
    second.next_unpaired_batch(&pools, 1, 11).unwrap();
    assert_eq!(second.next_unpaired_batch(&pools, 1, 3).unwrap(), early);
}

#[test]
fn empty_pool_is_reported() {
    let pools = DataPools { unpaired_a: vec![SliceSample::unpaired_a(ramp(16))], ..Default::default() };
    let mut sampler = BatchSampler::new(&pools, 0, false);
    assert!(sampler.next_unpaired_batch(&pools, 1, 0).is_err());
    assert!(sampler.next_paired_batch(&pools, 1, 0).is_err());
}

#[test]
fn network_range_round_trip() {
    let img = ramp(16);
    let t = to_network::<f64>(&[&img, &img]).unwrap();
    assert_eq!(t.shape(), [2, 1, 16, 16]);
    assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    let back = from_network(&t);
    for (x, y) in back[1].data.iter().zip(&img.data) {
        assert!((x - y).abs() < 1e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmented_output_stays_in_range(seed in any::<u64>(), k in 0u64..1000) {
        let params = draw_params(&mut stream_rng(seed, Stream::AugmentA, k), 32);
        prop_assert!(params.rotation_deg.abs() <= MAX_ROTATION_DEG);
        let out = augment(&SliceSample::unpaired_a(ramp(32)), &params).unwrap();
        prop_assert_eq!(out.image().dims(), (32, 32));
        prop_assert!(out.image().data.iter().all(|v| (0.0..=255.0).contains(v)));
    }
}
