//! Finite-difference and reference-loop checks for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rcft_tensor::{grad_check, BnMode, BnState, Graph, Result, Tensor, Var};

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape, v).unwrap()
}

/// Reduces `v` to a scalar through a fixed random weighting so that every
/// output coordinate contributes a distinct gradient.
fn weighted_sum(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = randn(&mut rng, g.shape(v));
    let wv = g.constant(w);
    let p = g.mul(v, wv)?;
    Ok(g.sum(p))
}

fn check<F>(name: &str, x: &Tensor<f64>, mut f: F)
where
    F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
{
    let err = grad_check(|g, v| f(g, v), x, EPS).unwrap();
    assert!(err < TOL, "{name}: max relative error {err:e}");
}

#[test]
fn elementwise_and_linear_ops_pass_grad_check() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..5);
        let k = rng.random_range(1..5);
        let n = rng.random_range(1..5);
        let x = randn(&mut rng, &[m, k]);
        let other = randn(&mut rng, &[k, n]);
        let same = randn(&mut rng, &[m, k]);
        let bias = randn(&mut rng, &[k]);

        check("matmul lhs", &x, |g, v| {
            let b = g.constant(other.clone());
            let y = g.matmul(v, b)?;
            weighted_sum(g, y, seed)
        });
        let xt = randn(&mut rng, &[n, m]);
        check("matmul rhs", &xt, |g, v| {
            let a = g.constant(randn(&mut ChaCha8Rng::seed_from_u64(seed + 100), &[k, n]));
            let y = g.matmul(a, v)?;
            weighted_sum(g, y, seed)
        });
        check("transpose", &x, |g, v| {
            let y = g.transpose(v)?;
            weighted_sum(g, y, seed)
        });
        check("add/sub/mul", &x, |g, v| {
            let c = g.constant(same.clone());
            let a = g.add(v, c)?;
            let s = g.sub(a, v)?;
            let p = g.mul(v, a)?;
            let q = g.add(p, s)?;
            weighted_sum(g, q, seed)
        });
        check("scale", &x, |g, v| {
            let y = g.scale(v, -1.7);
            weighted_sum(g, y, seed)
        });
        check("add_bias (input)", &x, |g, v| {
            let b = g.constant(bias.clone());
            let y = g.add_bias(v, b)?;
            weighted_sum(g, y, seed)
        });
        check("add_bias (bias)", &bias, |g, v| {
            let a = g.constant(x.clone());
            let y = g.add_bias(a, v)?;
            weighted_sum(g, y, seed)
        });
        check("silu", &x, |g, v| {
            let y = g.silu(v);
            weighted_sum(g, y, seed)
        });
        check("sigmoid", &x, |g, v| {
            let y = g.sigmoid(v);
            weighted_sum(g, y, seed)
        });
        for axis in 0..2 {
            check("softmax", &x, |g, v| {
                let y = g.softmax(v, axis)?;
                weighted_sum(g, y, seed)
            });
        }
        check("mean / mean_rows", &x, |g, v| {
            let r = g.mean_rows(v)?;
            let a = weighted_sum(g, r, seed)?;
            let b = g.mean(v);
            g.add(a, b)
        });
        check("reshape/slice/concat", &x, |g, v| {
            let r = g.reshape(v, &[m * k])?;
            let s = g.slice(r, 0, 0, (m * k).div_ceil(2))?;
            let c = g.concat(&[s, r, s], 0)?;
            weighted_sum(g, c, seed)
        });
    }
}

#[test]
fn spatial_ops_pass_grad_check() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(1..3);
        let c = rng.random_range(1..4);
        let h = rng.random_range(2..6);
        let w = rng.random_range(2..6);
        let x = randn(&mut rng, &[n, c, h, w]);
        let gate = randn(&mut rng, &[n, c]);

        check("global_avg_pool", &x, |g, v| {
            let y = g.global_avg_pool(v)?;
            weighted_sum(g, y, seed)
        });
        check("channels_last", &x, |g, v| {
            let y = g.channels_last(v)?;
            weighted_sum(g, y, seed)
        });
        check("group_mean_rows", &x, |g, v| {
            let t = g.channels_last(v)?;
            let y = g.group_mean_rows(t, n)?;
            weighted_sum(g, y, seed)
        });
        check("channel_scale (x)", &x, |g, v| {
            let s = g.constant(gate.clone());
            let y = g.channel_scale(v, s)?;
            weighted_sum(g, y, seed)
        });
        check("channel_scale (gate)", &gate, |g, v| {
            let xs = g.constant(x.clone());
            let y = g.channel_scale(xs, v)?;
            weighted_sum(g, y, seed)
        });

        let groups = if rng.random_bool(0.5) { c } else { 1 };
        let o = groups * rng.random_range(1..3);
        let kh = rng.random_range(1..4.min(h + 1));
        let kw = rng.random_range(1..4.min(w + 1));
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..2);
        let kernel = randn(&mut rng, &[o, c / groups, kh, kw]);
        check("conv2d (input)", &x, |g, v| {
            let k = g.constant(kernel.clone());
            let y = g.conv2d(v, k, stride, pad, groups)?;
            weighted_sum(g, y, seed)
        });
        check("conv2d (kernel)", &kernel, |g, v| {
            let xs = g.constant(x.clone());
            let y = g.conv2d(xs, v, stride, pad, groups)?;
            weighted_sum(g, y, seed)
        });

        let gamma = randn(&mut rng, &[c]);
        let beta = randn(&mut rng, &[c]);
        for mode in [BnMode::Train, BnMode::Eval] {
            if mode == BnMode::Train && n * h * w < 2 {
                continue;
            }
            let state = BnState::from_parts(vec![0.3; c], vec![1.7; c]).unwrap();
            check("batch_norm (x)", &x, |g, v| {
                let ga = g.constant(gamma.clone());
                let be = g.constant(beta.clone());
                let y = g.batch_norm(v, ga, be, &mut state.clone(), mode)?;
                weighted_sum(g, y, seed)
            });
            check("batch_norm (gamma)", &gamma, |g, v| {
                let xs = g.constant(x.clone());
                let be = g.constant(beta.clone());
                let y = g.batch_norm(xs, v, be, &mut state.clone(), mode)?;
                weighted_sum(g, y, seed)
            });
            check("batch_norm (beta)", &beta, |g, v| {
                let xs = g.constant(x.clone());
                let ga = g.constant(gamma.clone());
                let y = g.batch_norm(xs, ga, v, &mut state.clone(), mode)?;
                weighted_sum(g, y, seed)
            });
        }
    }
}

#[test]
fn bce_of_softmax_passes_grad_check() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let b = rng.random_range(1..8);
        let logits = randn(&mut rng, &[b, 2]);
        let targets: Vec<f64> = (0..b).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        check("bce∘softmax", &logits, |g, v| {
            let p = g.softmax(v, 1)?;
            let p1 = g.slice(p, 1, 1, 1)?;
            g.bce(p1, &targets)
        });
    }
}

/// Five nested loops, written without any of the kernel's range bookkeeping.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Vec<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, cg, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let og = o / groups;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            let grp = oc / og;
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for icg in 0..cg {
                        let ic = grp * cg + icg;
                        for di in 0..kh {
                            for dj in 0..kw {
                                let r = (i * stride + di) as isize - pad as isize;
                                let q = (j * stride + dj) as isize - pad as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                    continue;
                                }
                                s += x.at(&[b, ic, r as usize, q as usize]) * k.at(&[oc, icg, di, dj]);
                            }
                        }
                    }
                    let _ = c;
                    out[((b * o + oc) * oh + i) * ow + j] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_loops() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let groups = rng.random_range(1..4);
        let c = groups * rng.random_range(1..3);
        let o = groups * rng.random_range(1..3);
        let h = rng.random_range(3..10);
        let w = rng.random_range(3..10);
        let kh = rng.random_range(1..4);
        let kw = rng.random_range(1..6);
        let stride = rng.random_range(1..4);
        let pad = rng.random_range(0..3);
        if kw > w + 2 * pad || kh > h + 2 * pad {
            continue;
        }
        let x = randn(&mut rng, &[2, c, h, w]);
        let k = randn(&mut rng, &[o, c / groups, kh, kw]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(k.clone());
        let y = g.conv2d(xv, kv, stride, pad, groups).unwrap();
        let want = naive_conv(&x, &k, stride, pad, groups);
        assert_eq!(g.value(y).len(), want.len());
        for (a, b) in g.value(y).iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn float32_graph_runs_with_looser_tolerance() {
    let x = Tensor::<f32>::from_f64(&[2, 3], &[0.1, -0.4, 0.9, 1.3, -2.0, 0.5]).unwrap();
    let err = grad_check(
        |g, v| {
            let y = g.silu(v);
            Ok(g.sum(y))
        },
        &x,
        1e-2,
    )
    .unwrap();
    assert!(err < 1e-2, "{err}");
}
