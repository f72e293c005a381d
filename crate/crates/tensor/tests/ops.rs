use dualgan_tensor::{conv_out_len, ConvGeometry, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct-loop convolution used as an oracle for the im2col path.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, g: ConvGeometry) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let [cout, _, k, _] = w.shape();
    let oh = conv_out_len(h, k, g).unwrap();
    let ow = conv_out_len(wd, k, g).unwrap();
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ki in 0..k {
                            for kj in 0..k {
                                let y = (oy * g.stride + ki) as isize - g.pad as isize;
                                let xx = (ox * g.stride + kj) as isize - g.pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((s * cin + ci) * h + y as usize) * wd + xx as usize] * w.data()[((co * cin + ci) * k + ki) * k + kj];
                            }
                        }
                    }
                    out.data_mut()[((s * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Scatter definition of a transposed convolution.
fn naive_conv_t(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, g: ConvGeometry, op: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let [_, cout, k, _] = w.shape();
    let oh = (h - 1) * g.stride + k + op - 2 * g.pad;
    let ow = (wd - 1) * g.stride + k + op - 2 * g.pad;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for s in 0..n {
        for co in 0..cout {
            for v in out.data_mut()[(s * cout + co) * oh * ow..(s * cout + co + 1) * oh * ow].iter_mut() {
                *v = b.data()[co];
            }
        }
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = x.data()[((s * cin + ci) * h + iy) * wd + ix];
                    for co in 0..cout {
                        for ki in 0..k {
                            for kj in 0..k {
                                let y = (iy * g.stride + ki) as isize - g.pad as isize;
                                let xx = (ix * g.stride + kj) as isize - g.pad as isize;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                out.data_mut()[((s * cout + co) * oh + y as usize) * ow + xx as usize] +=
                                    xv * w.data()[((ci * cout + co) * k + ki) * k + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv2d_matches_direct_loops(seed in 0u64..1000, n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
                                   hw in 4usize..10, k in 1usize..5, stride in 1usize..3, pad in 0usize..3) {
        let g = ConvGeometry { stride, pad };
        prop_assume!(conv_out_len(hw, k, g).is_some());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([n, cin, hw, hw + 1], &mut rng);
        let w = random([cout, cin, k, k], &mut rng);
        let b = random([1, cout, 1, 1], &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, wv, Some(bv), g);
        prop_assert!(max_abs_diff(tape.value(y), &naive_conv(&x, &w, &b, g)) < 1e-12);
    }

    #[test]
    fn conv_transpose_matches_scatter(seed in 0u64..1000, cin in 1usize..4, cout in 1usize..4,
                                      hw in 2usize..7, k in 2usize..5, stride in 1usize..3, op in 0usize..2) {
        let pad = 1;
        prop_assume!(op < stride);
        prop_assume!((hw - 1) * stride + k + op > 2 * pad);
        let g = ConvGeometry { stride, pad };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([2, cin, hw, hw], &mut rng);
        let w = random([cin, cout, k, k], &mut rng);
        let b = random([1, cout, 1, 1], &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv_transpose2d(xv, wv, Some(bv), g, op);
        prop_assert!(max_abs_diff(tape.value(y), &naive_conv_t(&x, &w, &b, g, op)) < 1e-12);
    }
}

/// Central-difference check of d(loss)/d(leaves) for a graph builder.
fn check_grad(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let eval = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().into(), true)).collect();
        let out = build(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(&inputs);
    let mut grads = tape.backward(out);
    let h = 1e-6;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.take(*v).expect("gradient reached every input");
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            let fp = {
                let (t, _, o) = eval(&plus);
                t.value(o).item()
            };
            let fm = {
                let (t, _, o) = eval(&minus);
                t.value(o).item()
            };
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(err < 1e-6, "input {i} element {j}: analytic {a} numeric {numeric}");
        }
    }
}

fn projected(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(tape.value(y).shape(), &mut rng);
    let rv = tape.constant(r);
    let p = tape.mul(y, rv);
    tape.mean(p)
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![random([2, 2, 6, 5], &mut rng), random([3, 2, 4, 4], &mut rng), random([1, 3, 1, 1], &mut rng)];
    check_grad(inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), ConvGeometry { stride: 2, pad: 1 });
        projected(t, y, 9)
    });
}

#[test]
fn conv_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = vec![random([2, 3, 3, 4], &mut rng), random([3, 2, 3, 3], &mut rng), random([1, 2, 1, 1], &mut rng)];
    check_grad(inputs, |t, v| {
        let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), ConvGeometry { stride: 2, pad: 1 }, 1);
        assert_eq!(t.value(y).shape(), [2, 2, 6, 8]);
        projected(t, y, 10)
    });
}

#[test]
fn instance_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check_grad(vec![random([2, 3, 3, 3], &mut rng)], |t, v| {
        let y = t.instance_norm(v[0], 1e-5);
        projected(t, y, 11)
    });
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random([1, 2, 3, 3], &mut rng);
    let b = random([1, 2, 3, 3], &mut rng);
    check_grad(vec![a, b], |t, v| {
        let s = t.sub(v[0], v[1]);
        let abs = t.abs(s);
        let sq = t.square(v[0]);
        let th = t.tanh(v[1]);
        let sg = t.sigmoid(v[0]);
        let lg = t.ln_clamped(sg, 1e-7, 1.0 - 1e-7);
        let lr = t.leaky_relu(v[1], 0.2);
        let re = t.relu(v[0]);
        let mut acc = t.add(abs, sq);
        for part in [th, lg, lr, re] {
            acc = t.add(acc, part);
        }
        let cat = t.concat_channels(acc, v[1]);
        let sc = t.scale(cat, 0.7);
        let shifted = t.add_scalar(sc, 0.3);
        projected(t, shifted, 12)
    });
}

#[test]
fn clamped_log_has_zero_gradient_outside_range() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec([1, 1, 1, 2], vec![0.0, 2.0]).unwrap().into(), true);
    let y = tape.ln_clamped(x, 1e-7, 1.0 - 1e-7);
    assert!(tape.value(y).all_finite());
    let m = tape.mean(y);
    let mut g = tape.backward(m);
    assert_eq!(g.take(x).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn instance_norm_of_constant_plane_is_finite() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full([1, 2, 1, 1], 3.0));
    let y = tape.instance_norm(x, 1e-5);
    assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::full([1, 1, 2, 2], 1.0));
    let b = tape.leaf(Tensor::full([1, 1, 2, 2], 2.0).into(), true);
    let p = tape.mul(a, b);
    let m = tape.mean(p);
    let mut g = tape.backward(m);
    assert!(g.take(a).is_none());
    assert_eq!(g.take(b).unwrap().data(), &[0.25; 4]);
}

#[test]
fn piece_pattern_tracks_kink_sides() {
    let pattern = |values: Vec<f64>| {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec([1, 1, 1, 3], values).unwrap());
        let r = tape.relu(x);
        let a = tape.abs(x);
        let l = tape.ln_clamped(x, 0.1, 1.0);
        let s = tape.add(r, a);
        tape.add(s, l);
        tape.piece_pattern()
    };
    assert_eq!(pattern(vec![-1.0, 0.5, 2.0]), vec![0, 1, 1, 0, 1, 1, 0, 1, 2]);
    assert_eq!(pattern(vec![-1.0, 0.5, 2.0]), pattern(vec![-0.5, 0.7, 3.0]));
    assert_ne!(pattern(vec![-1.0, 0.5, 2.0]), pattern(vec![1.0, 0.5, 2.0]));
}
