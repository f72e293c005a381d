//! Reverse-mode differentiation over an append-only operation tape.
//!
//! Nodes are pushed in evaluation order, so the tape is already a topological
//! order and the backward pass is a single reverse sweep.

use std::sync::Arc;

use crate::conv::{self, ConvGeometry};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    Relu(Var),
    LeakyRelu { x: Var, slope: T },
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale { x: Var, factor: T },
    AddScalar(Var),
    Square(Var),
    Abs(Var),
    LnClamped { x: Var, lo: T, hi: T },
    Mean(Var),
    ConcatChannels(Var, Var),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    pub fn leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Var {
        let out = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, Op::Conv2d { x, w, b, geom }, &parents)
    }

    /// Transposed convolution; `out_pad` extra rows/columns are appended so
    /// that a stride-2 layer exactly doubles the spatial size.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry, out_pad: usize) -> Var {
        let out = conv::conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom, out_pad);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, Op::ConvTranspose2d { x, w, b, geom }, &parents)
    }

    /// Per-sample, per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let input = self.value(x);
        let [n, c, h, w] = input.shape();
        let plane = h * w;
        let count = T::lit(plane as f64);
        let eps = T::lit(eps);
        let mut out = Tensor::zeros(input.shape());
        let mut inv_std = Vec::with_capacity(n * c);
        for (idx, (src, dst)) in input.data().chunks(plane).zip(out.data_mut().chunks_mut(plane)).enumerate() {
            debug_assert!(idx < n * c);
            let mean = src.iter().copied().sum::<T>() / count;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let inv = T::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(out, Op::InstanceNorm { x, inv_std }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::lit(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let factor = T::lit(factor);
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        let offset = T::lit(offset);
        let out = self.value(x).map(|v| v + offset);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x), &[x])
    }

    /// `ln(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let out = self.value(x).map(|v| v.max(lo).min(hi).ln());
        self.push(out, Op::LnClamped { x, lo, hi }, &[x])
    }

    /// Which linear piece every piecewise op (ReLU, leaky ReLU, abs, log
    /// clamp) evaluated on, element by element. Two tapes of the same graph
    /// with equal patterns lie in one differentiable region.
    pub fn piece_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) | Op::LeakyRelu { x, .. } => out.extend(self.value(x).data().iter().map(|&v| u8::from(v > T::zero()))),
                Op::Abs(x) => out.extend(self.value(x).data().iter().map(|&v| u8::from(v >= T::zero()))),
                Op::LnClamped { x, lo, hi } => out.extend(self.value(x).data().iter().map(|&v| {
                    if v < lo {
                        0
                    } else if v > hi {
                        2
                    } else {
                        1
                    }
                })),
                _ => {}
            }
        }
        out
    }

    /// Mean over every element, as a `[1, 1, 1, 1]` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        self.push(out, Op::Mean(x), &[x])
    }

    /// Stacks `a` and `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = ta.shape();
        let [nb, cb, hb, wb] = tb.shape();
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels: batch/spatial mismatch");
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for s in 0..n {
            data.extend_from_slice(ta.sample(s));
            data.extend_from_slice(tb.sample(s));
        }
        let out = Tensor::from_vec([n, ca + cb, h, w], data).expect("concat size");
        self.push(out, Op::ConcatChannels(a, b), &[a, b])
    }

    /// Reverse sweep from a scalar `loss`, seeded with `d loss = 1`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward: loss must be a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let want = [self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b))];
                let (gx, gw, gb) = conv::conv2d_backward(self.value(*x), self.value(*w), g, *geom, want);
                gx.into_iter().for_each(|t| acc(*x, t));
                gw.into_iter().for_each(|t| acc(*w, t));
                if let (Some(b), Some(t)) = (b, gb) {
                    acc(*b, t);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let want = [self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b))];
                let (gx, gw, gb) = conv::conv_transpose2d_backward(self.value(*x), self.value(*w), g, *geom, want);
                gx.into_iter().for_each(|t| acc(*x, t));
                gw.into_iter().for_each(|t| acc(*w, t));
                if let (Some(b), Some(t)) = (b, gb) {
                    acc(*b, t);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let [_, _, h, w] = y.shape();
                let plane = h * w;
                let count = T::lit(plane as f64);
                let mut gx = Tensor::zeros(y.shape());
                let chunks = y.data().chunks(plane).zip(g.data().chunks(plane)).zip(gx.data_mut().chunks_mut(plane));
                for (((xhat, gy), dst), &inv) in chunks.zip(inv_std) {
                    let sum_g = gy.iter().copied().sum::<T>();
                    let sum_gx = gy.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>();
                    for ((d, &gi), &xi) in dst.iter_mut().zip(gy).zip(xhat) {
                        *d = inv * (gi - sum_g / count - xi * sum_gx / count);
                    }
                }
                acc(*x, gx);
            }
            Op::Relu(x) => {
                let gx = g.zip_map(y, |gi, yi| if yi > T::zero() { gi } else { T::zero() });
                acc(*x, gx);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let gx = g.zip_map(xv, |gi, xi| if xi > T::zero() { gi } else { gi * *slope });
                acc(*x, gx);
            }
            Op::Tanh(x) => acc(*x, g.zip_map(y, |gi, yi| gi * (T::one() - yi * yi))),
            Op::Sigmoid(x) => acc(*x, g.zip_map(y, |gi, yi| gi * yi * (T::one() - yi))),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.zip_map(self.value(*b), |gi, bi| gi * bi));
                }
                if self.wants(*b) {
                    acc(*b, g.zip_map(self.value(*a), |gi, ai| gi * ai));
                }
            }
            Op::Scale { x, factor } => acc(*x, g.map(|v| v * *factor)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Square(x) => {
                let two = T::lit(2.0);
                acc(*x, g.zip_map(self.value(*x), |gi, xi| two * xi * gi));
            }
            Op::Abs(x) => {
                let gx = g.zip_map(self.value(*x), |gi, xi| {
                    if xi > T::zero() {
                        gi
                    } else if xi < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                });
                acc(*x, gx);
            }
            Op::LnClamped { x, lo, hi } => {
                let gx = g.zip_map(self.value(*x), |gi, xi| if xi < *lo || xi > *hi { T::zero() } else { gi / xi });
                acc(*x, gx);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let share = g.item() / T::lit(xv.len() as f64);
                acc(*x, Tensor::full(xv.shape(), share));
            }
            Op::ConcatChannels(a, b) => {
                let ca = self.value(*a).shape()[1];
                let [n, c, h, w] = g.shape();
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * (c - ca) * plane);
                for s in 0..n {
                    let src = g.sample(s);
                    ga.extend_from_slice(&src[..ca * plane]);
                    gb.extend_from_slice(&src[ca * plane..]);
                }
                acc(*a, Tensor::from_vec([n, ca, h, w], ga).expect("split size"));
                acc(*b, Tensor::from_vec([n, c - ca, h, w], gb).expect("split size"));
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`]; populated for leaves that
/// require a gradient and are reachable from the loss.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
