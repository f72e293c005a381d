//! Paired and unpaired slice pools, online augmentation and batch assembly.

use std::collections::HashMap;

use dualgan_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::manifest::{DatasetManifest, Domain, Split};
use crate::rng::{stream_rng, Stream};

/// One training unit: a single slice of either domain, or an aligned pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSample {
    pub image_a: Option<Image>,
    pub image_b: Option<Image>,
    pub pair_id: Option<String>,
}

impl SliceSample {
    pub fn paired(a: Image, b: Image, pair_id: impl Into<String>) -> Result<Self> {
        if a.dims() != b.dims() {
            return Err(Error::ShapeMismatch { op: "paired sample", lhs: vec![a.width, a.height], rhs: vec![b.width, b.height] });
        }
        Ok(Self { image_a: Some(a), image_b: Some(b), pair_id: Some(pair_id.into()) })
    }

    pub fn unpaired_a(image: Image) -> Self {
        Self { image_a: Some(image), image_b: None, pair_id: None }
    }

    pub fn unpaired_b(image: Image) -> Self {
        Self { image_a: None, image_b: Some(image), pair_id: None }
    }

    pub fn is_paired(&self) -> bool {
        self.image_a.is_some() && self.image_b.is_some()
    }

    /// The domain-A image if present, otherwise the domain-B image.
    pub fn image(&self) -> &Image {
        self.image_a.as_ref().or(self.image_b.as_ref()).expect("sample holds at least one image")
    }

    fn map_images(&self, f: impl Fn(&Image) -> Image) -> Self {
        Self { image_a: self.image_a.as_ref().map(&f), image_b: self.image_b.as_ref().map(&f), pair_id: self.pair_id.clone() }
    }
}

/// Reflect-pad margin per side: 15 px at 256, scaled with the slice size.
pub fn pad_for(slice_size: usize) -> usize {
    (slice_size as f64 * 15.0 / 256.0 + 0.5).floor() as usize
}

pub const MAX_ROTATION_DEG: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Top-left corner of the crop inside the padded image, `0..=2*pad` each.
    pub crop_offset: (usize, usize),
    pub rotation_deg: f64,
}

impl AugmentParams {
    /// Parameters that leave a slice unchanged.
    pub fn identity(slice_size: usize) -> Self {
        let pad = pad_for(slice_size);
        Self { flip: false, crop_offset: (pad, pad), rotation_deg: 0.0 }
    }

    pub fn validate(&self, slice_size: usize) -> Result<()> {
        let max = 2 * pad_for(slice_size);
        if self.crop_offset.0 > max || self.crop_offset.1 > max {
            return Err(Error::invalid("augment params", format!("crop offset {:?} outside 0..={max}", self.crop_offset)));
        }
        if !(self.rotation_deg.abs() <= MAX_ROTATION_DEG) {
            return Err(Error::invalid("augment params", format!("rotation {} outside [-5, 5]", self.rotation_deg)));
        }
        Ok(())
    }
}

/// Flip ~ Bernoulli(0.5), offsets uniform over the padded margin, rotation
/// uniform over [-5, 5] degrees.
pub fn draw_params(rng: &mut ChaCha8Rng, slice_size: usize) -> AugmentParams {
    let max = 2 * pad_for(slice_size);
    let flip = rng.random_bool(0.5);
    let crop_offset = (rng.random_range(0..=max), rng.random_range(0..=max));
    let rotation_deg = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    AugmentParams { flip, crop_offset, rotation_deg }
}

/// Per-output-pixel bilinear taps into the source slice for one set of
/// augmentation parameters. Building the grid once and applying it to both
/// images of a pair guarantees identical geometry.
pub struct SamplingGrid {
    size: usize,
    taps: Vec<[(usize, f32); 4]>,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

impl SamplingGrid {
    pub fn new(size: usize, params: &AugmentParams) -> Result<Self> {
        params.validate(size)?;
        let pad = pad_for(size) as isize;
        if pad as usize >= size {
            return Err(Error::invalid("augment", "slice too small for its padding"));
        }
        // source index of cropped-image pixel (i, j) after flip + reflect pad
        let source = |cx: isize, cy: isize| -> usize {
            let px = reflect(cx + params.crop_offset.0 as isize - pad, size);
            let py = reflect(cy + params.crop_offset.1 as isize - pad, size);
            let px = if params.flip { size - 1 - px } else { px };
            py * size + px
        };
        let center = (size as f64 - 1.0) / 2.0;
        let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
        let mut taps = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                if params.rotation_deg == 0.0 {
                    taps.push([(source(x as isize, y as isize), 1.0), (0, 0.0), (0, 0.0), (0, 0.0)]);
                    continue;
                }
                // inverse rotation about the slice center
                let (dx, dy) = (x as f64 - center, y as f64 - center);
                let sx = cos * dx + sin * dy + center;
                let sy = -sin * dx + cos * dy + center;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (tx, ty) = (sx - x0, sy - y0);
                let mut cell = [(0, 0.0f32); 4];
                let corners = [(0, 0, (1.0 - tx) * (1.0 - ty)), (1, 0, tx * (1.0 - ty)), (0, 1, (1.0 - tx) * ty), (1, 1, tx * ty)];
                for (slot, (ox, oy, w)) in cell.iter_mut().zip(corners) {
                    let (cx, cy) = (x0 as isize + ox, y0 as isize + oy);
                    // zero fill outside the crop
                    if cx >= 0 && cy >= 0 && (cx as usize) < size && (cy as usize) < size {
                        *slot = (source(cx, cy), w as f32);
                    }
                }
                taps.push(cell);
            }
        }
        Ok(Self { size, taps })
    }

    pub fn apply(&self, image: &Image) -> Result<Image> {
        if image.dims() != (self.size, self.size) {
            return Err(Error::ShapeMismatch { op: "augment", lhs: vec![image.width, image.height], rhs: vec![self.size, self.size] });
        }
        let data = self
            .taps
            .iter()
            .map(|cell| cell.iter().map(|&(i, w)| if w == 0.0 { 0.0 } else { image.data[i] * w }).sum::<f32>().clamp(0.0, 255.0))
            .collect();
        Image::from_vec(self.size, self.size, data)
    }
}

/// Flip, reflect-pad, crop and rotate a sample; both images of a pair share
/// the same transform.
pub fn augment(sample: &SliceSample, params: &AugmentParams) -> Result<SliceSample> {
    let (w, h) = sample.image().dims();
    if w != h {
        return Err(Error::invalid("augment", format!("slices must be square, got {w}x{h}")));
    }
    if let (Some(a), Some(b)) = (&sample.image_a, &sample.image_b) {
        if a.dims() != b.dims() {
            return Err(Error::ShapeMismatch { op: "augment", lhs: vec![a.width, a.height], rhs: vec![b.width, b.height] });
        }
    }
    let grid = SamplingGrid::new(w, params)?;
    Ok(sample.map_images(|img| grid.apply(img).expect("pair dims validated")))
}

/// Without-replacement sampling: draw `k` reads position `k mod len` of the
/// permutation for epoch `k / len`, each permutation addressed by its epoch.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    len: usize,
    seed: u64,
    stream: Stream,
    cached: Option<(u64, Vec<usize>)>,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64, stream: Stream) -> Result<Self> {
        if len == 0 {
            return Err(Error::Empty("sample pool"));
        }
        Ok(Self { len, seed, stream, cached: None })
    }

    pub fn index(&mut self, draw: u64) -> usize {
        let epoch = draw / self.len as u64;
        let pos = (draw % self.len as u64) as usize;
        match &self.cached {
            Some((e, perm)) if *e == epoch => perm[pos],
            _ => {
                let mut perm: Vec<usize> = (0..self.len).collect();
                perm.shuffle(&mut stream_rng(self.seed, self.stream, epoch));
                let v = perm[pos];
                self.cached = Some((epoch, perm));
                v
            }
        }
    }
}

/// Training pools loaded from a manifest.
#[derive(Clone, Debug, Default)]
pub struct DataPools {
    pub unpaired_a: Vec<SliceSample>,
    pub unpaired_b: Vec<SliceSample>,
    pub paired: Vec<SliceSample>,
}

impl DataPools {
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let mut pools = DataPools::default();
        let mut halves: HashMap<String, (Option<Image>, Option<Image>)> = HashMap::new();
        let mut order = Vec::new();
        for e in &manifest.entries {
            let img = Image::read_pgm(&manifest.root.join(&e.path))?;
            match (e.split, e.domain) {
                (Split::Unpaired, Domain::A) => pools.unpaired_a.push(SliceSample::unpaired_a(img)),
                (Split::Unpaired, Domain::B) => pools.unpaired_b.push(SliceSample::unpaired_b(img)),
                (Split::Paired, domain) => {
                    let id = e.pair_id.clone().expect("parser enforces pair ids");
                    let slot = halves.entry(id.clone()).or_insert_with(|| {
                        order.push(id);
                        (None, None)
                    });
                    let half = if domain == Domain::A { &mut slot.0 } else { &mut slot.1 };
                    if half.replace(img).is_some() {
                        return Err(Error::invalid("manifest", format!("pair {} has two {domain} slices", e.pair_id.as_deref().unwrap_or(""))));
                    }
                }
            }
        }
        for id in order {
            match halves.remove(&id) {
                Some((Some(a), Some(b))) => pools.paired.push(SliceSample::paired(a, b, id)?),
                _ => return Err(Error::invalid("manifest", format!("pair {id} is missing a slice"))),
            }
        }
        Ok(pools)
    }

    pub fn slice_size(&self) -> Option<usize> {
        self.unpaired_a.iter().chain(&self.unpaired_b).chain(&self.paired).next().map(|s| s.image().width)
    }
}

/// Deterministic batch producer. Batch `draw` depends only on the seed and
/// the draw counter, so batches can be produced ahead of the trainer or
/// regenerated after a resume.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    seed: u64,
    augment: bool,
    sampler_a: Option<EpochSampler>,
    sampler_b: Option<EpochSampler>,
    sampler_paired: Option<EpochSampler>,
}

impl BatchSampler {
    pub fn new(pools: &DataPools, seed: u64, augment: bool) -> Self {
        let make = |len: usize, stream| EpochSampler::new(len, seed, stream).ok();
        Self {
            seed,
            augment,
            sampler_a: make(pools.unpaired_a.len(), Stream::ShuffleA),
            sampler_b: make(pools.unpaired_b.len(), Stream::ShuffleB),
            sampler_paired: make(pools.paired.len(), Stream::ShufflePaired),
        }
    }

    fn draw_one(&self, sample: &SliceSample, stream: Stream, counter: u64) -> Result<SliceSample> {
        if !self.augment {
            return Ok(sample.clone());
        }
        let mut rng = stream_rng(self.seed, stream, counter);
        let params = draw_params(&mut rng, sample.image().width);
        augment(sample, &params)
    }

    /// `m` domain-A and `m` domain-B slices, shuffled and augmented independently.
    pub fn next_unpaired_batch(&mut self, pools: &DataPools, m: usize, draw: u64) -> Result<(Vec<Image>, Vec<Image>)> {
        let (Some(sa), Some(sb)) = (self.sampler_a.as_mut(), self.sampler_b.as_mut()) else {
            return Err(Error::Empty("unpaired pool"));
        };
        let mut picks = Vec::with_capacity(m);
        for i in 0..m as u64 {
            let k = draw * m as u64 + i;
            picks.push((k, sa.index(k), sb.index(k)));
        }
        let mut batch_a = Vec::with_capacity(m);
        let mut batch_b = Vec::with_capacity(m);
        for (k, ia, ib) in picks {
            let a = self.draw_one(&pools.unpaired_a[ia], Stream::AugmentA, k)?;
            let b = self.draw_one(&pools.unpaired_b[ib], Stream::AugmentB, k)?;
            batch_a.push(a.image_a.expect("unpaired A sample"));
            batch_b.push(b.image_b.expect("unpaired B sample"));
        }
        Ok((batch_a, batch_b))
    }

    /// `m` aligned pairs; each pair shares one augmentation draw.
    pub fn next_paired_batch(&mut self, pools: &DataPools, m: usize, draw: u64) -> Result<Vec<(Image, Image)>> {
        let Some(sp) = self.sampler_paired.as_mut() else {
            return Err(Error::Empty("paired pool"));
        };
        let picks: Vec<(u64, usize)> = (0..m as u64).map(|i| draw * m as u64 + i).map(|k| (k, sp.index(k))).collect();
        picks
            .into_iter()
            .map(|(k, idx)| {
                let s = self.draw_one(&pools.paired[idx], Stream::AugmentPaired, k)?;
                Ok((s.image_a.expect("paired"), s.image_b.expect("paired")))
            })
            .collect()
    }
}

/// Stacks slices into an `[m, 1, H, W]` tensor on the network range [-1, 1].
pub fn to_network<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::Empty("batch"))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.dims() != (w, h) {
            return Err(Error::ShapeMismatch { op: "batch assembly", lhs: vec![w, h], rhs: vec![img.width, img.height] });
        }
        data.extend(img.data.iter().map(|&v| T::lit(v as f64 / 127.5 - 1.0)));
    }
    Ok(Tensor::from_vec([images.len(), 1, h, w], data).expect("batch size"))
}

/// Inverse of [`to_network`], clamped to [0, 255] (not rounded).
pub fn from_network<T: Scalar>(tensor: &Tensor<T>) -> Vec<Image> {
    let [n, c, h, w] = tensor.shape();
    assert_eq!(c, 1, "single-channel output expected");
    (0..n)
        .map(|s| {
            let data = tensor.sample(s).iter().map(|v| ((v.as_f64() + 1.0) * 127.5).clamp(0.0, 255.0) as f32).collect();
            Image { width: w, height: h, data }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ramp(size: usize) -> Image {
        Image::from_vec(size, size, (0..size * size).map(|i| (i % 251) as f32).collect()).unwrap()
    }

    #[test]
    fn pad_is_fifteen_at_256() {
        assert_eq!(pad_for(256), 15);
        assert_eq!(pad_for(64), 4);
    }

    #[test]
    fn identity_params_leave_sample_unchanged() {
        let s = SliceSample::paired(ramp(32), ramp(32), "p").unwrap();
        assert_eq!(augment(&s, &AugmentParams::identity(32)).unwrap(), s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = SliceSample::unpaired_a(ramp(32));
        let p = AugmentParams { flip: true, ..AugmentParams::identity(32) };
        assert_eq!(augment(&augment(&s, &p).unwrap(), &p).unwrap(), s);
    }

    #[test]
    fn out_of_range_offset_is_rejected() {
        let s = SliceSample::unpaired_a(ramp(32));
        let p = AugmentParams { crop_offset: (2 * pad_for(32) + 1, 0), ..AugmentParams::identity(32) };
        assert!(augment(&s, &p).is_err());
    }

    #[test]
    fn reflect_padding_mirrors_without_repeating_the_edge() {
        let s = SliceSample::unpaired_a(ramp(16));
        // shift the crop one pixel left of the image: column 0 shows source column 1
        let p = AugmentParams { crop_offset: (pad_for(16) - 1, pad_for(16)), ..AugmentParams::identity(16) };
        let out = augment(&s, &p).unwrap();
        assert_eq!(out.image().get(0, 3), s.image().get(1, 3));
        assert_eq!(out.image().get(1, 3), s.image().get(0, 3));
    }

    #[test]
    fn epoch_sampler_visits_each_index_once_per_epoch() {
        let mut s = EpochSampler::new(7, 3, Stream::ShuffleA).unwrap();
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..7).map(|i| s.index(epoch * 7 + i)).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn network_range_round_trip() {
        let img = Image::from_vec(2, 1, vec![0.0, 255.0]).unwrap();
        let t = to_network::<f32>(&[&img]).unwrap();
        assert_eq!(t.data(), &[-1.0, 1.0]);
        assert_eq!(from_network(&t)[0], img);
    }

    #[test]
    fn draw_params_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let p = draw_params(&mut rng, 64);
            assert!(p.validate(64).is_ok());
        }
    }
}
