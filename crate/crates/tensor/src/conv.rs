//! Convolution kernels built on im2col/col2im and a single-threaded GEMM.

use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Stride and zero padding of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

/// Output side length of a convolution, `floor((in + 2p - k) / s) + 1`,
/// or `None` when the kernel does not fit.
pub fn conv_out_len(input: usize, kernel: usize, geom: ConvGeometry) -> Option<usize> {
    let padded = input + 2 * geom.pad;
    if padded < kernel || geom.stride == 0 {
        return None;
    }
    Some((padded - kernel) / geom.stride + 1)
}

/// Output side length of a transposed convolution.
pub fn conv_transpose_out_len(input: usize, kernel: usize, geom: ConvGeometry, out_pad: usize) -> usize {
    (input - 1) * geom.stride + kernel + out_pad - 2 * geom.pad
}

/// Plane geometry shared by im2col and col2im: an image of `channels x h x w`
/// sampled by a `k x k` window on an `oh x ow` grid.
#[derive(Clone, Copy)]
struct Patches {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeometry,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let p = self.cols();
        let (s, pad) = (self.geom.stride as isize, self.geom.pad as isize);
        for c in 0..self.channels {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let y = oy as isize * s - pad + ki as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if y < 0 || y >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for (ox, out) in line.iter_mut().enumerate() {
                            let x = ox as isize * s - pad + kj as isize;
                            *out = if x < 0 || x >= self.w as isize { T::zero() } else { src[x as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back onto the image.
    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let p = self.cols();
        let (s, pad) = (self.geom.stride as isize, self.geom.pad as isize);
        for c in 0..self.channels {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let y = oy as isize * s - pad + ki as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let x = ox as isize * s - pad + kj as isize;
                            if x >= 0 && x < self.w as isize {
                                dst[x as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut Tensor<T>, bias: &Tensor<T>) {
    let [n, c, h, w] = out.shape();
    let plane = h * w;
    for s in 0..n {
        let sample = out.sample_mut(s);
        for ch in 0..c {
            let b = bias.data()[ch];
            sample[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = grad_out.shape();
    let plane = h * w;
    let mut g = Tensor::zeros([1, c, 1, 1]);
    for s in 0..n {
        let sample = grad_out.sample(s);
        for ch in 0..c {
            g.data_mut()[ch] += sample[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
        }
    }
    g
}

/// Weight `[cout, cin, k, k]`, optional bias `[1, cout, 1, 1]`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, geom: ConvGeometry) -> Tensor<T> {
    let [n, cin, h, w] = x.shape();
    let [cout, wcin, k, k2] = weight.shape();
    assert_eq!(cin, wcin, "conv2d: input channels {cin} vs kernel {wcin}");
    assert_eq!(k, k2, "conv2d: square kernels only");
    let oh = conv_out_len(h, k, geom).expect("conv2d: kernel larger than padded input");
    let ow = conv_out_len(w, k, geom).expect("conv2d: kernel larger than padded input");
    let patches = Patches { channels: cin, h, w, k, oh, ow, geom };
    let (rows, p) = (patches.rows(), patches.cols());
    let mut cols = vec![T::zero(); rows * p];
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for s in 0..n {
        patches.im2col(x.sample(s), &mut cols);
        gemm(cout, rows, p, (weight.data(), rows, 1), (&cols, p, 1), T::zero(), out.sample_mut(s));
    }
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    out
}

/// Optional gradients with respect to `(input, weight, bias)`.
pub type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

/// Gradients of a conv2d with respect to `(input, weight, bias)`; each is
/// computed only when requested.
pub fn conv2d_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>, geom: ConvGeometry, want: [bool; 3]) -> ConvGrads<T> {
    let [n, cin, h, w] = x.shape();
    let [cout, _, k, _] = weight.shape();
    let [_, _, oh, ow] = grad_out.shape();
    let patches = Patches { channels: cin, h, w, k, oh, ow, geom };
    let (rows, p) = (patches.rows(), patches.cols());
    let mut cols = vec![T::zero(); rows * p];
    let mut gx = want[0].then(|| Tensor::zeros(x.shape()));
    let mut gw = want[1].then(|| Tensor::zeros(weight.shape()));
    for s in 0..n {
        let gy = grad_out.sample(s);
        if let Some(gw) = gw.as_mut() {
            patches.im2col(x.sample(s), &mut cols);
            // dW[cout, rows] += dY[cout, p] * cols^T
            gemm(cout, p, rows, (gy, p, 1), (&cols, 1, p), T::one(), gw.data_mut());
        }
        if let Some(gx) = gx.as_mut() {
            // dcols[rows, p] = W^T * dY
            gemm(rows, cout, p, (weight.data(), 1, rows), (gy, p, 1), T::zero(), &mut cols);
            patches.col2im(&cols, gx.sample_mut(s));
        }
    }
    let gb = want[2].then(|| bias_grad(grad_out));
    (gx, gw, gb)
}

/// Weight `[cin, cout, k, k]`, optional bias `[1, cout, 1, 1]`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
    out_pad: usize,
) -> Tensor<T> {
    let [n, cin, h, w] = x.shape();
    let [wcin, cout, k, _] = weight.shape();
    assert_eq!(cin, wcin, "conv_transpose2d: input channels {cin} vs kernel {wcin}");
    let oh = conv_transpose_out_len(h, k, geom, out_pad);
    let ow = conv_transpose_out_len(w, k, geom, out_pad);
    // The output plane is the "image" side of a conv whose column grid is the input.
    let patches = Patches { channels: cout, h: oh, w: ow, k, oh: h, ow: w, geom };
    let (rows, p) = (patches.rows(), patches.cols());
    let mut cols = vec![T::zero(); rows * p];
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for s in 0..n {
        // cols[rows, p] = W^T[rows, cin] * x[cin, p]
        gemm(rows, cin, p, (weight.data(), 1, rows), (x.sample(s), p, 1), T::zero(), &mut cols);
        patches.col2im(&cols, out.sample_mut(s));
    }
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    out
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    want: [bool; 3],
) -> ConvGrads<T> {
    let [n, cin, h, w] = x.shape();
    let [_, cout, k, _] = weight.shape();
    let [_, _, oh, ow] = grad_out.shape();
    let patches = Patches { channels: cout, h: oh, w: ow, k, oh: h, ow: w, geom };
    let (rows, p) = (patches.rows(), patches.cols());
    let mut cols = vec![T::zero(); rows * p];
    let mut gx = want[0].then(|| Tensor::zeros(x.shape()));
    let mut gw = want[1].then(|| Tensor::zeros(weight.shape()));
    if want[0] || want[1] {
        for s in 0..n {
            patches.im2col(grad_out.sample(s), &mut cols);
            if let Some(gx) = gx.as_mut() {
                // dx[cin, p] = W[cin, rows] * dcols[rows, p]
                gemm(cin, rows, p, (weight.data(), rows, 1), (&cols, p, 1), T::zero(), gx.sample_mut(s));
            }
            if let Some(gw) = gw.as_mut() {
                // dW[cin, rows] += x[cin, p] * dcols^T
                gemm(cin, p, rows, (x.sample(s), p, 1), (&cols, 1, p), T::one(), gw.data_mut());
            }
        }
    }
    let gb = want[2].then(|| bias_grad(grad_out));
    (gx, gw, gb)
}
