//! Synthesis networks and patch discriminators.
//!
//! The generator is the residual image-transformation network: a 7x7 stem,
//! two stride-2 3x3 convolutions, `N` residual blocks, two stride-2
//! transposed convolutions and a 7x7 output convolution with tanh. Every
//! convolution but the last is followed by instance normalization and ReLU.
//!
//! The discriminator has an input-specific head (1-channel unpaired input or
//! 2-channel `[condition, image]` paired input), a shared trunk and a
//! loss-specific tail (linear for least squares, sigmoid for log-likelihood).
//! All discriminator convolutions are 4x4 with padding 1. Stride schedule:
//! the first head convolution and the first three trunk convolutions use
//! stride 2, everything else stride 1.

use std::fmt;
use std::str::FromStr;

use dualgan_tensor::{conv_out_len, Bound, ConvGeometry, ParamSet, Scalar, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;
pub const DISC_KERNEL: usize = 4;

fn init_weight<T: Scalar>(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::lit(normal.sample(rng))).collect()).expect("init size")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ConvKind {
    Forward,
    Transposed,
}

/// One convolution with its parameter indices and geometry.
#[derive(Clone, Debug)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    geom: ConvGeometry,
    kind: ConvKind,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        geom: ConvGeometry,
        kind: ConvKind,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let shape = match kind {
            ConvKind::Forward => [cout, cin, kernel, kernel],
            ConvKind::Transposed => [cin, cout, kernel, kernel],
        };
        let weight = params.push(format!("{name}.weight"), init_weight(shape, rng));
        let bias = params.push(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1]));
        Self { weight, bias, geom, kind }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Var {
        let (w, b) = (bound.get(self.weight), Some(bound.get(self.bias)));
        match self.kind {
            ConvKind::Forward => tape.conv2d(x, w, b, self.geom),
            ConvKind::Transposed => tape.conv_transpose2d(x, w, b, self.geom, 1),
        }
    }
}

fn norm_relu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let n = tape.instance_norm(x, INSTANCE_NORM_EPS);
    tape.relu(n)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub base_width: usize,
    pub num_residual_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { base_width: 64, num_residual_blocks: 9 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::invalid("generator config", "base_width must be positive"));
        }
        if self.num_residual_blocks == 0 {
            return Err(Error::invalid("generator config", "num_residual_blocks must be at least 1"));
        }
        Ok(())
    }
}

/// Residual image-to-image generator (one of the two synthesis networks).
#[derive(Clone, Debug)]
pub struct Generator<T> {
    config: GeneratorConfig,
    params: ParamSet<T>,
    stem: ConvLayer,
    down: [ConvLayer; 2],
    blocks: Vec<(ConvLayer, ConvLayer)>,
    up: [ConvLayer; 2],
    out: ConvLayer,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let w = config.base_width;
        let mut p = ParamSet::new();
        let same = |pad| ConvGeometry { stride: 1, pad };
        let half = ConvGeometry { stride: 2, pad: 1 };
        let stem = ConvLayer::new(&mut p, "stem", 1, w, 7, same(3), ConvKind::Forward, rng);
        let down = [
            ConvLayer::new(&mut p, "down.0", w, 2 * w, 3, half, ConvKind::Forward, rng),
            ConvLayer::new(&mut p, "down.1", 2 * w, 4 * w, 3, half, ConvKind::Forward, rng),
        ];
        let blocks = (0..config.num_residual_blocks)
            .map(|i| {
                (
                    ConvLayer::new(&mut p, &format!("res.{i}.a"), 4 * w, 4 * w, 3, same(1), ConvKind::Forward, rng),
                    ConvLayer::new(&mut p, &format!("res.{i}.b"), 4 * w, 4 * w, 3, same(1), ConvKind::Forward, rng),
                )
            })
            .collect();
        let up = [
            ConvLayer::new(&mut p, "up.0", 4 * w, 2 * w, 3, half, ConvKind::Transposed, rng),
            ConvLayer::new(&mut p, "up.1", 2 * w, w, 3, half, ConvKind::Transposed, rng),
        ];
        let out = ConvLayer::new(&mut p, "out", w, 1, 7, same(3), ConvKind::Forward, rng);
        Ok(Self { config: config.clone(), params: p, stem, down, blocks, up, out })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Index of the output convolution's weight and bias.
    pub fn output_layer(&self) -> (usize, usize) {
        (self.out.weight, self.out.bias)
    }

    pub fn check_input(shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != 1 || h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid("generator input", format!("need [n, 1, h, w] with h, w divisible by 4, got {shape:?}")));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`; `bound` must come from
    /// `self.params().bind(..)` on the same tape.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Var {
        let mut h = self.stem.forward(tape, bound, x);
        h = norm_relu(tape, h);
        for layer in &self.down {
            h = layer.forward(tape, bound, h);
            h = norm_relu(tape, h);
        }
        for (a, b) in &self.blocks {
            let mut r = a.forward(tape, bound, h);
            r = norm_relu(tape, r);
            r = b.forward(tape, bound, r);
            r = tape.instance_norm(r, INSTANCE_NORM_EPS);
            h = tape.add(h, r);
        }
        for layer in &self.up {
            h = layer.forward(tape, bound, h);
            h = norm_relu(tape, h);
        }
        let y = self.out.forward(tape, bound, h);
        tape.tanh(y)
    }

    /// Gradient-free evaluation on a `[n, 1, h, w]` batch in [-1, 1].
    pub fn translate(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Self::check_input(input.shape())?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &bound, x);
        Ok(tape.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// One image.
    Unpaired,
    /// Condition and image stacked as two channels.
    Paired,
}

impl InputKind {
    pub fn channels(self) -> usize {
        match self {
            InputKind::Unpaired => 1,
            InputKind::Paired => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LeastSquares,
    Nll,
}

/// Layer widths of a discriminator. A missing head or tail means that input
/// or loss kind is unsupported.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub name: String,
    pub head_unpaired: Option<Vec<usize>>,
    pub head_paired: Option<Vec<usize>>,
    pub shared: Vec<usize>,
    pub tail_least_squares: Option<Vec<usize>>,
    pub tail_nll: Option<Vec<usize>>,
}

pub const DISCRIMINATOR_NAMES: [&str; 5] = ["D1", "D2", "D3", "D4", "D5"];

/// Disc. variant by name: `(head, shared, tail)` widths.
fn preset_widths(name: &str) -> Option<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    Some(match name {
        "D1" => (vec![64], vec![64, 128, 256, 512], vec![512, 1]),
        "D2" => (vec![64, 64], vec![64, 128, 256, 512], vec![512, 512, 1]),
        "D3" => (vec![64, 64], vec![64, 128, 256, 512], vec![512, 512, 512, 1]),
        "D4" => (vec![64], vec![128, 256, 512], vec![512, 1]),
        "D5" => (vec![64], vec![128, 256, 512], vec![1]),
        _ => return None,
    })
}

/// One convolution of a discriminator path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscLayer {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub normalized: bool,
    pub activated: bool,
}

impl DiscriminatorSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let (head, shared, tail) = preset_widths(name)
            .ok_or_else(|| Error::Config(format!("unknown discriminator {name:?}; valid names: {}", DISCRIMINATOR_NAMES.join(", "))))?;
        Ok(Self {
            name: name.to_string(),
            head_unpaired: Some(head.clone()),
            head_paired: Some(head),
            shared,
            tail_least_squares: Some(tail.clone()),
            tail_nll: Some(tail),
        })
    }

    /// Same topology with every hidden width divided by `divisor` (at least 1).
    pub fn narrowed(&self, divisor: usize) -> Self {
        let div = |v: &Vec<usize>| v.iter().map(|&w| if w == 1 { 1 } else { (w / divisor.max(1)).max(1) }).collect();
        let tail = |v: &Vec<usize>| {
            let mut out: Vec<usize> = div(v);
            if let Some(last) = out.last_mut() {
                *last = 1;
            }
            out
        };
        Self {
            name: if divisor > 1 { format!("{}/{divisor}", self.name) } else { self.name.clone() },
            head_unpaired: self.head_unpaired.as_ref().map(div),
            head_paired: self.head_paired.as_ref().map(div),
            shared: div(&self.shared),
            tail_least_squares: self.tail_least_squares.as_ref().map(tail),
            tail_nll: self.tail_nll.as_ref().map(tail),
        }
    }

    pub fn head(&self, kind: InputKind) -> Option<&Vec<usize>> {
        match kind {
            InputKind::Unpaired => self.head_unpaired.as_ref(),
            InputKind::Paired => self.head_paired.as_ref(),
        }
    }

    pub fn tail(&self, kind: LossKind) -> Option<&Vec<usize>> {
        match kind {
            LossKind::LeastSquares => self.tail_least_squares.as_ref(),
            LossKind::Nll => self.tail_nll.as_ref(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("discriminator spec", format!("{}: {r}", self.name)));
        if self.shared.is_empty() {
            return bad("shared trunk is empty".into());
        }
        let heads = [self.head_unpaired.as_ref(), self.head_paired.as_ref()];
        let tails = [self.tail_least_squares.as_ref(), self.tail_nll.as_ref()];
        if heads.iter().all(Option::is_none) || tails.iter().all(Option::is_none) {
            return bad("needs at least one head and one tail".into());
        }
        for list in heads.into_iter().chain(tails).flatten().chain([&self.shared]) {
            if list.is_empty() || list.contains(&0) {
                return bad(format!("widths {list:?} must be non-empty and positive"));
            }
        }
        for tail in tails.into_iter().flatten() {
            if tail.last() != Some(&1) {
                return bad(format!("tail {tail:?} must end in width 1"));
            }
        }
        // every head must feed the trunk with the same width
        let mut head_outs = heads.into_iter().flatten().map(|h| *h.last().expect("non-empty"));
        let first = head_outs.next().expect("at least one head");
        if head_outs.any(|w| w != first) {
            return bad("heads end in different widths".into());
        }
        Ok(())
    }

    /// Layer sequence of the `(input, loss)` path, or `None` if the spec
    /// lacks that head or tail.
    pub fn path(&self, input: InputKind, loss: LossKind) -> Option<Vec<DiscLayer>> {
        let head = self.head(input)?;
        let tail = self.tail(loss)?;
        let mut layers = Vec::new();
        let mut cin = input.channels();
        let total = head.len() + self.shared.len() + tail.len();
        let mut push = |cout: usize, stride: usize, layers: &mut Vec<DiscLayer>| {
            let idx = layers.len();
            let first = idx == 0;
            let last = idx + 1 == total;
            layers.push(DiscLayer { cin, cout, stride, normalized: !first && !last, activated: !last });
            cin = cout;
        };
        for (i, &w) in head.iter().enumerate() {
            push(w, if i == 0 { 2 } else { 1 }, &mut layers);
        }
        for (i, &w) in self.shared.iter().enumerate() {
            push(w, if i < 3 { 2 } else { 1 }, &mut layers);
        }
        for &w in tail {
            push(w, 1, &mut layers);
        }
        Some(layers)
    }

    /// Spatial side of the patch map for a square `input_size` input.
    pub fn patch_map_size(&self, input: InputKind, loss: LossKind, input_size: usize) -> Option<usize> {
        self.path(input, loss)?
            .iter()
            .try_fold(input_size, |side, l| conv_out_len(side, DISC_KERNEL, ConvGeometry { stride: l.stride, pad: 1 }).filter(|&s| s > 0))
    }
}

#[derive(Clone, Debug)]
struct DiscStage {
    convs: Vec<ConvLayer>,
    /// Per conv: (instance norm, leaky ReLU).
    post: Vec<(bool, bool)>,
}

fn build_stage<T: Scalar>(params: &mut ParamSet<T>, prefix: &str, layers: &[DiscLayer], rng: &mut ChaCha8Rng) -> DiscStage {
    let convs = layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let geom = ConvGeometry { stride: l.stride, pad: 1 };
            ConvLayer::new(params, &format!("{prefix}.{i}"), l.cin, l.cout, DISC_KERNEL, geom, ConvKind::Forward, rng)
        })
        .collect();
    DiscStage { convs, post: layers.iter().map(|l| (l.normalized, l.activated)).collect() }
}

impl DiscStage {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, mut x: Var) -> Var {
        for (conv, &(norm, act)) in self.convs.iter().zip(&self.post) {
            x = conv.forward(tape, bound, x);
            if norm {
                x = tape.instance_norm(x, INSTANCE_NORM_EPS);
            }
            if act {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        x
    }
}

/// Patch discriminator with per-input heads and per-loss tails around one
/// shared trunk. Both paths through a given trunk share its parameters.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    params: ParamSet<T>,
    heads: Vec<(InputKind, DiscStage)>,
    trunk: DiscStage,
    tails: Vec<(LossKind, DiscStage)>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(spec: &DiscriminatorSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let input_kinds = [InputKind::Unpaired, InputKind::Paired];
        let loss_kinds = [LossKind::LeastSquares, LossKind::Nll];
        let any_loss = loss_kinds.into_iter().find(|&l| spec.tail(l).is_some()).expect("validated");
        let any_input = input_kinds.into_iter().find(|&i| spec.head(i).is_some()).expect("validated");
        let mut heads = Vec::new();
        for kind in input_kinds {
            if let Some(path) = spec.path(kind, any_loss) {
                let n = spec.head(kind).map_or(0, Vec::len);
                let prefix = format!("head.{kind}");
                heads.push((kind, build_stage(&mut params, &prefix, &path[..n], rng)));
            }
        }
        let path = spec.path(any_input, any_loss).expect("validated");
        let head_len = spec.head(any_input).map_or(0, Vec::len);
        let trunk = build_stage(&mut params, "trunk", &path[head_len..head_len + spec.shared.len()], rng);
        let mut tails = Vec::new();
        for kind in loss_kinds {
            if let Some(path) = spec.path(any_input, kind) {
                let start = head_len + spec.shared.len();
                let prefix = format!("tail.{kind}");
                tails.push((kind, build_stage(&mut params, &prefix, &path[start..], rng)));
            }
        }
        Ok(Self { spec: spec.clone(), params, heads, trunk, tails })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Indices of the trunk's parameters.
    pub fn trunk_param_indices(&self) -> Vec<usize> {
        self.trunk.convs.iter().flat_map(|c| [c.weight, c.bias]).collect()
    }

    /// Patch map for `x`; the NLL tail ends in a sigmoid, the least-squares
    /// tail is linear.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, x: Var, input: InputKind, loss: LossKind) -> Result<Var> {
        let head = self.heads.iter().find(|(k, _)| *k == input).map(|(_, s)| s);
        let tail = self.tails.iter().find(|(k, _)| *k == loss).map(|(_, s)| s);
        let (Some(head), Some(tail)) = (head, tail) else {
            return Err(Error::invalid("discriminator", format!("{} has no {input:?} head or {loss:?} tail", self.spec.name)));
        };
        let shape = tape.value(x).shape();
        if shape[1] != input.channels() {
            return Err(Error::invalid("discriminator input", format!("{input:?} needs {} channels, got {shape:?}", input.channels())));
        }
        if self.spec.patch_map_size(input, loss, shape[2].min(shape[3])).is_none() {
            return Err(Error::invalid("discriminator input", format!("{shape:?} is too small for {}", self.spec.name)));
        }
        let mut h = head.forward(tape, bound, x);
        h = self.trunk.forward(tape, bound, h);
        h = tail.forward(tape, bound, h);
        Ok(match loss {
            LossKind::Nll => tape.sigmoid(h),
            LossKind::LeastSquares => h,
        })
    }

    /// Gradient-free evaluation.
    pub fn score(&self, input: &Tensor<T>, kind: InputKind, loss: LossKind) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &bound, x, kind, loss)?;
        Ok(tape.value(y).clone())
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputKind::Unpaired => "unpaired",
            InputKind::Paired => "paired",
        })
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::LeastSquares => "least_squares",
            LossKind::Nll => "nll",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_squares" => Ok(LossKind::LeastSquares),
            "nll" => Ok(LossKind::Nll),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Weight-initialization generator for network number `net`.
pub fn init_rng(seed: u64, net: u64) -> ChaCha8Rng {
    crate::rng::stream_rng(seed, crate::rng::Stream::WeightInit, net)
}
