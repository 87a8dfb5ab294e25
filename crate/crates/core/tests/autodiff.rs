use glance_core::autodiff::gradcheck::check;
use glance_core::autodiff::{AdamConfig, AdamState, Graph, ParamGroup, ParamStore, LEAKY_SLOPE};
use glance_core::Tensor64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor64 {
    let n = shape.iter().product();
    Tensor64::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct seven-loop convolution with TensorFlow-style "same" padding.
fn conv_oracle(x: &Tensor64, k: &Tensor64, b: &[f64], stride: usize, dilation: usize) -> (Vec<usize>, Vec<f64>) {
    let (n, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let pad = |size: usize, kernel: usize| {
        let out = (size + stride - 1) / stride;
        let eff = (kernel - 1) * dilation + 1;
        let total = ((out - 1) * stride + eff).saturating_sub(size);
        (out, total / 2)
    };
    let (oh, pt) = pad(h, kh);
    let (ow, pl) = pad(w, kw);
    let mut y = vec![0.0; n * oh * ow * cout];
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = b[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky * dilation) as isize - pt as isize;
                            let ix = (ox * stride + kx * dilation) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x.data()[((bi * h + iy as usize) * w + ix as usize) * cin + ci];
                                let kv = k.data()[((ky * kw + kx) * cin + ci) * cout + co];
                                acc += xv * kv;
                            }
                        }
                    }
                    y[((bi * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    (vec![n, oh, ow, cout], y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_oracle(
        seed in any::<u64>(),
        batch in 1usize..3,
        h in 1usize..9,
        w in 1usize..9,
        cin in 1usize..4,
        cout in 1usize..4,
        kernel in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3,
        dilation in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[batch, h, w, cin]);
        let k = random(&mut rng, &[kernel, kernel, cin, cout]);
        let b = random(&mut rng, &[cout]);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let (xn, kn, bn) = (g.input(x.clone()).unwrap(), g.input(k.clone()).unwrap(), g.input(b.clone()).unwrap());
        let y = g.conv2d(xn, kn, Some(bn), stride, dilation).unwrap();
        let (shape, want) = conv_oracle(&x, &k, b.data(), stride, dilation);
        prop_assert_eq!(g.shape(y), shape.as_slice());
        for (a, e) in g.value(y).data().iter().zip(&want) {
            prop_assert!((a - e).abs() < 1e-12, "{} vs {}", a, e);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences(
        seed in any::<u64>(),
        h in 2usize..7,
        cin in 1usize..3,
        cout in 1usize..3,
        stride in 1usize..3,
        dilation in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.insert("x", ParamGroup::Encoder, random(&mut rng, &[1, h, h, cin])).unwrap();
        let k = store.insert("k", ParamGroup::Encoder, random(&mut rng, &[3, 3, cin, cout])).unwrap();
        let b = store.insert("b", ParamGroup::Encoder, random(&mut rng, &[cout])).unwrap();
        let side = (h + stride - 1) / stride;
        let target = random(&mut rng, &[1, side, side, cout]);
        let r = check("conv", &mut store, 32, &mut rng, |g| {
            let (xn, kn, bn) = (g.param(x), g.param(k), g.param(b));
            let y = g.conv2d(xn, kn, Some(bn), stride, dilation)?;
            let y = g.leaky_relu(y, LEAKY_SLOPE)?;
            let t = g.input(target.clone())?;
            g.mean_sq_error(y, t)
        }).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{:?}", r);
    }

    #[test]
    fn dense_softmax_ce_gradients(seed in any::<u64>(), batch in 1usize..5, inp in 1usize..6, out in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.insert("x", ParamGroup::Head, random(&mut rng, &[batch, inp])).unwrap();
        let w = store.insert("w", ParamGroup::Head, random(&mut rng, &[inp, out])).unwrap();
        let b = store.insert("b", ParamGroup::Head, random(&mut rng, &[out])).unwrap();
        let mut labels = Tensor64::zeros([batch, out]);
        for r in 0..batch {
            labels.data_mut()[r * out + rng.gen_range(0..out)] = 1.0;
        }
        let r = check("dense+softmax+ce", &mut store, 32, &mut rng, |g| {
            let (xn, wn, bn) = (g.param(x), g.param(w), g.param(b));
            let z = g.dense(xn, wn, bn)?;
            let z = g.tanh(z)?;
            let p = g.softmax(z)?;
            g.cross_entropy(p, &labels)
        }).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{:?}", r);
    }

    #[test]
    fn pixel_shuffle_is_depth_to_space(seed in any::<u64>(), h in 1usize..5, w in 1usize..5, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[1, h, w, 4 * c]);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let xn = g.input(x.clone()).unwrap();
        let y = g.pixel_shuffle(xn).unwrap();
        prop_assert_eq!(g.shape(y), &[1, 2 * h, 2 * w, c][..]);
        let yv = g.value(y).data();
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                for ch in 0..c {
                    let src = ((oy / 2) * w + ox / 2) * 4 * c + ((oy % 2) * 2 + ox % 2) * c + ch;
                    prop_assert_eq!(yv[(oy * 2 * w + ox) * c + ch], x.data()[src]);
                }
            }
        }
    }
}

#[test]
fn gradient_reversal_negates_and_scales() {
    let mut store = ParamStore::new();
    let x = store.insert("x", ParamGroup::Encoder, Tensor64::from_f64([1, 3], &[0.5, -1.0, 2.0]).unwrap()).unwrap();
    let g = {
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        let r = g.gradient_reversal(xn, 0.5).unwrap();
        assert_eq!(g.value(r).data(), &[0.5, -1.0, 2.0]);
        let zero = g.input(Tensor64::zeros([1, 3])).unwrap();
        let l = g.mean_sq_error(r, zero).unwrap();
        g.backward(l).unwrap().param(x).unwrap().to_vec()
    };
    // d/dx mean(x^2) = 2x/3, reversed and halved.
    for (gv, xv) in g.iter().zip([0.5, -1.0, 2.0]) {
        assert!((gv + 0.5 * 2.0 * xv / 3.0).abs() < 1e-15);
    }
}

#[test]
fn adam_first_step_matches_closed_form() {
    let mut store = ParamStore::new();
    let id = store.insert("w", ParamGroup::Head, Tensor64::from_f64([2], &[1.0, -2.0]).unwrap()).unwrap();
    let grad = [0.3, -0.004];
    store.get_mut(id).tensor.set_grad(grad.to_vec()).unwrap();
    let cfg = AdamConfig::with_lr(1e-3);
    let mut adam = AdamState::new(&store, cfg);
    adam.step(&mut store).unwrap();
    // After one step m_hat = g and v_hat = g^2, so the update is lr * g / (|g| + eps).
    for (v, (w0, g)) in store.tensor(id).data().iter().zip([1.0, -2.0].iter().zip(grad)) {
        let want = w0 - 1e-3 * g / (g.abs() + 1e-8);
        assert!((v - want).abs() < 1e-15, "{v} vs {want}");
    }
    assert_eq!(adam.step_count(), 1);
}
