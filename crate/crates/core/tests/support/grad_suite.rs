//! Finite-difference checks for every operator and the composed blocks.
//! Each check runs `cases` random shapes/seeds and returns the worst
//! relative error it saw.

#![allow(dead_code)]

use cass_core::model::{Block, BlockSpec, FwdCtx, Model, ModelConfig, ParamBuilder, ParamStore};
use cass_core::tensor::{self, BnMode, BnRunning, ConvParams, Shape, Tensor};
use rand::Rng;

use super::gradcheck::*;

pub type Check = fn(usize) -> f64;

pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("conv2d", conv2d as Check),
        ("depthwise_conv2d", depthwise),
        ("batch_norm/train", batch_norm_train),
        ("batch_norm/eval", batch_norm_eval),
        ("channel_shuffle", shuffle),
        ("channel_split+concat", split_concat),
        ("relu", relu),
        ("max_pool", max_pool),
        ("global_avg_pool", gap),
        ("linear", linear),
        ("softmax_cross_entropy", softmax_ce),
        ("basic_block", basic_block),
        ("downsample_block", downsample_block),
        ("tiny_model", tiny_model),
    ]
}

fn worst(cases: usize, mut one: impl FnMut(u64) -> f64) -> f64 {
    (0..cases as u64)
        .map(|s| {
            let e = one(s);
            if std::env::var_os("GRAD_DEBUG").is_some() && e > TOLERANCE {
                eprintln!("case {s}: {e:.3e}");
            }
            e
        })
        .fold(0.0, f64::max)
}

fn with_data(t: &Tensor<f64>, d: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.shape(), d.to_vec()).unwrap()
}

pub fn conv2d(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(1000 + seed);
        let groups = r.random_range(1..=2usize);
        let cin = groups * r.random_range(1..=3usize);
        let cout = groups * r.random_range(1..=3usize);
        let k = [1usize, 3][r.random_range(0..2)];
        let stride = r.random_range(1..=2usize);
        let pad = r.random_range(0..=k / 2);
        let (h, w) = (r.random_range(3..=6usize), r.random_range(3..=6usize));
        let n = r.random_range(1..=2usize);
        let p = ConvParams::new(stride, pad, groups);
        let x = random_tensor(&mut r, Shape::new(n, cin, h, w), 1.0);
        let wt = random_tensor(&mut r, Shape::new(cout, cin / groups, k, k), 1.0);
        let b = random_vec(&mut r, cout, 1.0);
        let out = tensor::conv2d(&x, &wt, Some(&b), p).unwrap();
        let probe = random_vec(&mut r, out.len(), 1.0);
        let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
        let g = tensor::conv2d_backward(&x, &wt, &go, true, p).unwrap();

        let e_x = rel_error(
            g.input.data(),
            &numeric_grad(x.data(), |d| {
                dot(&tensor::conv2d(&with_data(&x, d), &wt, Some(&b), p).unwrap(), &probe)
            }),
        );
        let e_w = rel_error(
            g.weight.data(),
            &numeric_grad(wt.data(), |d| {
                dot(&tensor::conv2d(&x, &with_data(&wt, d), Some(&b), p).unwrap(), &probe)
            }),
        );
        let e_b = rel_error(
            g.bias.as_ref().unwrap(),
            &numeric_grad(&b, |d| dot(&tensor::conv2d(&x, &wt, Some(d), p).unwrap(), &probe)),
        );
        e_x.max(e_w).max(e_b)
    })
}

pub fn depthwise(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(2000 + seed);
        let c = r.random_range(1..=4usize);
        let stride = r.random_range(1..=2usize);
        let (h, w) = (r.random_range(3..=6usize), r.random_range(3..=6usize));
        let x = random_tensor(&mut r, Shape::new(2, c, h, w), 1.0);
        let wt = random_tensor(&mut r, Shape::new(c, 1, 3, 3), 1.0);
        let out = tensor::depthwise_conv2d(&x, &wt, stride, 1).unwrap();
        let probe = random_vec(&mut r, out.len(), 1.0);
        let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
        let g = tensor::depthwise_conv2d_backward(&x, &wt, &go, stride, 1).unwrap();
        let e_x = rel_error(
            g.input.data(),
            &numeric_grad(x.data(), |d| {
                dot(
                    &tensor::depthwise_conv2d(&with_data(&x, d), &wt, stride, 1).unwrap(),
                    &probe,
                )
            }),
        );
        let e_w = rel_error(
            g.weight.data(),
            &numeric_grad(wt.data(), |d| {
                dot(
                    &tensor::depthwise_conv2d(&x, &with_data(&wt, d), stride, 1).unwrap(),
                    &probe,
                )
            }),
        );
        e_x.max(e_w)
    })
}

fn bn_case(seed: u64, mode: BnMode) -> f64 {
    let mut r = rng(seed);
    let c = r.random_range(1..=3usize);
    let shape = Shape::new(
        r.random_range(1..=3usize),
        c,
        r.random_range(2..=4usize),
        r.random_range(1..=4usize),
    );
    let x = random_tensor(&mut r, shape, 2.0);
    let gamma = random_vec(&mut r, c, 2.0);
    let beta = random_vec(&mut r, c, 1.0);
    let running = BnRunning {
        mean: random_vec(&mut r, c, 0.5),
        var: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
    };
    let eps = 1e-5;
    let fwd = |x: &Tensor<f64>, g: &[f64], b: &[f64]| tensor::batch_norm(x, g, b, &running, mode, eps).unwrap().0;
    let (out, cache) = tensor::batch_norm(&x, &gamma, &beta, &running, mode, eps).unwrap();
    let probe = random_vec(&mut r, out.len(), 1.0);
    let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
    let g = tensor::batch_norm_backward(&cache, &gamma, &go).unwrap();
    let e_x = rel_error(
        g.input.data(),
        &numeric_grad(x.data(), |d| dot(&fwd(&with_data(&x, d), &gamma, &beta), &probe)),
    );
    let e_g = rel_error(&g.gamma, &numeric_grad(&gamma, |d| dot(&fwd(&x, d, &beta), &probe)));
    let e_b = rel_error(&g.beta, &numeric_grad(&beta, |d| dot(&fwd(&x, &gamma, d), &probe)));
    e_x.max(e_g).max(e_b)
}

pub fn batch_norm_train(cases: usize) -> f64 {
    worst(cases, |s| bn_case(3000 + s, BnMode::Train))
}

pub fn batch_norm_eval(cases: usize) -> f64 {
    worst(cases, |s| bn_case(3500 + s, BnMode::Eval))
}

pub fn shuffle(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(4000 + seed);
        let groups = r.random_range(1..=4usize);
        let c = groups * r.random_range(1..=3usize);
        let x = random_tensor(&mut r, Shape::new(2, c, 2, 3), 1.0);
        let out = tensor::channel_shuffle(&x, groups).unwrap();
        let probe = random_vec(&mut r, out.len(), 1.0);
        let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
        let g = tensor::channel_shuffle_backward(&go, groups).unwrap();
        rel_error(
            g.data(),
            &numeric_grad(x.data(), |d| {
                dot(&tensor::channel_shuffle(&with_data(&x, d), groups).unwrap(), &probe)
            }),
        )
    })
}

pub fn split_concat(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(5000 + seed);
        let ca = r.random_range(1..=3usize);
        let cb = r.random_range(1..=3usize);
        let a = random_tensor(&mut r, Shape::new(2, ca, 2, 2), 1.0);
        let b = random_tensor(&mut r, Shape::new(2, cb, 2, 2), 1.0);
        let out = tensor::concat_channels(&a, &b).unwrap();
        let probe = random_vec(&mut r, out.len(), 1.0);
        let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
        let (ga, gb) = tensor::concat_channels_backward(&go, ca).unwrap();
        let e_a = rel_error(
            ga.data(),
            &numeric_grad(a.data(), |d| {
                dot(&tensor::concat_channels(&with_data(&a, d), &b).unwrap(), &probe)
            }),
        );
        let e_b = rel_error(
            gb.data(),
            &numeric_grad(b.data(), |d| {
                dot(&tensor::concat_channels(&a, &with_data(&b, d)).unwrap(), &probe)
            }),
        );

        // split: probe both halves
        let x = random_tensor(&mut r, Shape::new(2, 2 * ca, 2, 2), 1.0);
        let (xa, _) = tensor::channel_split(&x).unwrap();
        let pa = random_vec(&mut r, xa.len(), 1.0);
        let pb = random_vec(&mut r, xa.len(), 1.0);
        let f = |d: &[f64]| {
            let (u, v) = tensor::channel_split(&with_data(&x, d)).unwrap();
            dot(&u, &pa) + dot(&v, &pb)
        };
        let gsplit = tensor::channel_split_backward(
            &Tensor::from_vec(xa.shape(), pa.clone()).unwrap(),
            &Tensor::from_vec(xa.shape(), pb.clone()).unwrap(),
        )
        .unwrap();
        let e_s = rel_error(gsplit.data(), &numeric_grad(x.data(), f));
        e_a.max(e_b).max(e_s)
    })
}

pub fn relu(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(6000 + seed);
        let x = random_tensor_off_zero(&mut r, Shape::new(2, 3, 3, 3));
        let out = tensor::relu(&x);
        let probe = random_vec(&mut r, out.len(), 1.0);
        let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
        let g = tensor::relu_backward(&x, &go).unwrap();
        rel_error(
            g.data(),
            &numeric_grad(x.data(), |d| dot(&tensor::relu(&with_data(&x, d)), &probe)),
        )
    })
}

pub fn max_pool(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(7000 + seed);
        let k = r.random_range(2..=3usize);
        let s = r.random_range(1..=2usize);
        let shape = Shape::new(2, 2, r.random_range(k..=6), r.random_range(k..=6));
        // distinct values spaced well beyond the FD step
        let mut vals: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * 0.01).collect();
        for i in (1..vals.len()).rev() {
            let j = r.random_range(0..=i);
            vals.swap(i, j);
        }
        let x = Tensor::from_vec(shape, vals).unwrap();
        let (out, cache) = tensor::max_pool(&x, k, s).unwrap();
        let probe = random_vec(&mut r, out.len(), 1.0);
        let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
        let g = tensor::max_pool_backward(&cache, &go).unwrap();
        rel_error(
            g.data(),
            &numeric_grad(x.data(), |d| {
                dot(&tensor::max_pool(&with_data(&x, d), k, s).unwrap().0, &probe)
            }),
        )
    })
}

pub fn gap(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(8000 + seed);
        let shape = Shape::new(2, r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=4));
        let x = random_tensor(&mut r, shape, 1.0);
        let out = tensor::global_avg_pool(&x);
        let probe = random_vec(&mut r, out.len(), 1.0);
        let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
        let g = tensor::global_avg_pool_backward(shape, &go).unwrap();
        rel_error(
            g.data(),
            &numeric_grad(x.data(), |d| dot(&tensor::global_avg_pool(&with_data(&x, d)), &probe)),
        )
    })
}

pub fn linear(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(9000 + seed);
        let (n, f, k) = (r.random_range(1..=3), r.random_range(1..=6), r.random_range(1..=4));
        let x = random_tensor(&mut r, Shape::new(n, f, 1, 1), 1.0);
        let w = random_tensor(&mut r, Shape::new(k, f, 1, 1), 1.0);
        let b = random_vec(&mut r, k, 1.0);
        let out = tensor::linear(&x, &w, &b).unwrap();
        let probe = random_vec(&mut r, out.len(), 1.0);
        let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
        let g = tensor::linear_backward(&x, &w, &go).unwrap();
        let e_x = rel_error(
            g.input.data(),
            &numeric_grad(x.data(), |d| {
                dot(&tensor::linear(&with_data(&x, d), &w, &b).unwrap(), &probe)
            }),
        );
        let e_w = rel_error(
            g.weight.data(),
            &numeric_grad(w.data(), |d| {
                dot(&tensor::linear(&x, &with_data(&w, d), &b).unwrap(), &probe)
            }),
        );
        let e_b = rel_error(
            &g.bias,
            &numeric_grad(&b, |d| dot(&tensor::linear(&x, &w, d).unwrap(), &probe)),
        );
        e_x.max(e_w).max(e_b)
    })
}

pub fn softmax_ce(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(10_000 + seed);
        let (n, k) = (r.random_range(1..=4), r.random_range(2..=5));
        let x = random_tensor(&mut r, Shape::new(n, k, 1, 1), 3.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let (_, probs) = tensor::softmax_cross_entropy(&x, &labels).unwrap();
        let g = tensor::softmax_cross_entropy_backward(&probs, &labels).unwrap();
        rel_error(
            g.data(),
            &numeric_grad(x.data(), |d| {
                tensor::softmax_cross_entropy(&with_data(&x, d), &labels).unwrap().0
            }),
        )
    })
}

/// Moves BN affine parameters and running statistics off their initial
/// values, so that no activation sits exactly on a ReLU kink.
fn perturb_bn(store: &mut ParamStore<f64>, r: &mut impl Rng) {
    for p in &mut store.params {
        if p.name.ends_with(".gamma") || p.name.ends_with(".beta") {
            for v in p.value.data_mut() {
                *v += r.random_range(-0.3..0.3);
            }
        }
    }
    for s in &mut store.stats {
        for v in &mut s.stats.mean {
            *v = r.random_range(-0.2..0.2);
        }
        for v in &mut s.stats.var {
            *v = r.random_range(0.5..1.5);
        }
    }
}

fn block_case(seed: u64, spec: BlockSpec, hw: usize) -> f64 {
    let mut r = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let block = Block::build(spec, "b", &mut ParamBuilder::new(&mut store, seed)).unwrap();
    perturb_bn(&mut store, &mut r);
    let mode = if seed.is_multiple_of(2) {
        BnMode::Train
    } else {
        BnMode::Eval
    };
    let x = random_tensor(&mut r, Shape::new(2, spec.in_channels, hw, hw), 1.0);
    let fwd = |store: &ParamStore<f64>, x: &Tensor<f64>| {
        let mut ctx = FwdCtx::new(store, mode);
        block.forward(&mut ctx, x).unwrap()
    };
    let (out, cache) = fwd(&store, &x);
    let probe = random_vec(&mut r, out.len(), 1.0);
    let go = Tensor::from_vec(out.shape(), probe.clone()).unwrap();
    let mut grads = store.zero_gradients();
    let gx = block.backward(&store, &cache, &go, &mut grads).unwrap();

    let mut worst_err = rel_error(
        gx.data(),
        &numeric_grad(x.data(), |d| dot(&fwd(&store, &with_data(&x, d)).0, &probe)),
    );
    for i in 0..store.params.len() {
        let orig = store.params[i].value.data().to_vec();
        let mut st = store.clone();
        let num = numeric_grad(&orig, |d| {
            st.params[i].value.data_mut().copy_from_slice(d);
            dot(&fwd(&st, &x).0, &probe)
        });
        let e = rel_error(&grads[i], &num);
        if std::env::var_os("GRAD_DEBUG").is_some() && e > TOLERANCE {
            let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            eprintln!(
                "  {} {e:.3e} |a|={:.3e} |n|={:.3e}",
                store.params[i].name,
                n(&grads[i]),
                n(&num)
            );
        }
        worst_err = worst_err.max(e);
    }
    worst_err
}

pub fn basic_block(cases: usize) -> f64 {
    worst(cases, |s| {
        let c = 2 * (1 + (s as usize % 3));
        block_case(11_000 + s, BlockSpec::basic(c), 4)
    })
}

pub fn downsample_block(cases: usize) -> f64 {
    worst(cases, |s| {
        let cin = 1 + (s as usize % 3);
        let cout = 2 * (1 + (s as usize / 3) % 2);
        block_case(12_000 + s, BlockSpec::down(cin, cout), 4 + (s as usize % 2))
    })
}

pub fn tiny_model(cases: usize) -> f64 {
    worst(cases, |seed| {
        let mut r = rng(13_000 + seed);
        let mut model = Model::<f64>::new(ModelConfig::tiny().with_seed(seed)).unwrap();
        perturb_bn(&mut model.store, &mut r);
        let mode = if seed % 2 == 0 { BnMode::Train } else { BnMode::Eval };
        let x = random_tensor(&mut r, Shape::new(2, 1, 8, 8), 1.0);
        let labels = vec![r.random_range(0..3usize), r.random_range(0..3usize)];
        let loss = |m: &Model<f64>, x: &Tensor<f64>| {
            let (logits, _) = m.forward(x, mode).unwrap();
            tensor::softmax_cross_entropy(&logits, &labels).unwrap().0
        };
        let (logits, cache) = model.forward(&x, mode).unwrap();
        let (_, probs) = tensor::softmax_cross_entropy(&logits, &labels).unwrap();
        let gl = tensor::softmax_cross_entropy_backward(&probs, &labels).unwrap();
        let (gx, grads) = model.backward(&cache, &gl).unwrap();
        let mut w = rel_error(gx.data(), &numeric_grad(x.data(), |d| loss(&model, &with_data(&x, d))));
        // the full parameter sweep is the expensive part; sample a few tensors per case
        let np = model.parameters().len();
        for _ in 0..3 {
            let i = r.random_range(0..np);
            let orig = model.parameters()[i].value.data().to_vec();
            let mut m = model.clone();
            let num = numeric_grad(&orig, |d| {
                m.parameters_mut()[i].value.data_mut().copy_from_slice(d);
                loss(&m, &x)
            });
            w = w.max(rel_error(&grads[i], &num));
        }
        w
    })
}
