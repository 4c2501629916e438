//! Reference implementations shared by the integration tests and the
//! acceptance run. Each one is written from the definition, with plain loops
//! and no reuse of the code under test.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rcft_core::model::{ParamStore, Role, Session};
use rcft_core::Result;
use rcft_tensor::{Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// Worst coordinate of a central-difference check of `loss` against the
/// tape gradient, over every trainable entry of `store`.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub max_rel: f64,
    pub worst: String,
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, floor)` per coordinate. Each evaluation runs on
/// a fresh copy of `store` so train-mode buffer updates cannot leak between
/// probes.
pub fn param_grad_check<F>(store: &ParamStore<f64>, eps: f64, floor: f64, mut loss: F) -> Result<ParamCheck>
where
    F: FnMut(&mut Session<'_, f64>) -> Result<Var>,
{
    let mut work = store.clone();
    let mut s = Session::train(&mut work);
    let l = loss(&mut s)?;
    s.graph.backward(l)?;
    let analytic = s.grads();
    drop(s);

    let mut eval = |st: &mut ParamStore<f64>| -> Result<f64> {
        let mut s = Session::train(st);
        let l = loss(&mut s)?;
        Ok(s.graph.value(l)[0])
    };
    let mut out = ParamCheck {
        max_rel: 0.0,
        worst: String::new(),
        coordinates: 0,
    };
    for id in store.ids() {
        if store.role(id) != Role::Trainable {
            continue;
        }
        let n = store.get(id).numel();
        let grad = analytic[id.index()].clone().unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[i] += eps;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] -= eps;
            let numeric = (eval(&mut plus)? - eval(&mut minus)?) / (2.0 * eps);
            let a = grad[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            out.coordinates += 1;
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{}[{i}]: tape {a:e}, numeric {numeric:e}", store.entries()[id.index()].name);
            }
        }
    }
    Ok(out)
}

/// Direct-definition 2-D convolution, NCHW input and OIHW kernel.
pub fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Vec<f64> {
    let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (o, cg, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let og = o / groups;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for b in 0..n {
        for oc in 0..o {
            let g = oc / og;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cg {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xo * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.at(&[b, g * cg + ci, iy as usize, ix as usize]) * k.at(&[oc, ci, dy, dx]);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// A random convolution problem; `None` when the kernel would not fit.
pub struct ConvCase {
    pub x: Tensor<f64>,
    pub k: Tensor<f64>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

pub fn conv_case(r: &mut ChaCha8Rng) -> Option<ConvCase> {
    let groups = r.random_range(1..4);
    let c = groups * r.random_range(1..3);
    let o = groups * r.random_range(1..3);
    let h = r.random_range(3..10);
    let w = r.random_range(3..10);
    let kh = r.random_range(1..4);
    let kw = r.random_range(1..6);
    let stride = r.random_range(1..4);
    let pad = r.random_range(0..3);
    if kw > w + 2 * pad || kh > h + 2 * pad {
        return None;
    }
    let n = r.random_range(1..3);
    Some(ConvCase {
        x: randn(r, &[n, c, h, w]),
        k: randn(r, &[o, c / groups, kh, kw]),
        stride,
        pad,
        groups,
    })
}

fn mat(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// `concat_i(softmax(X Wq_i (X Wk_i)ᵀ / √d) X Wv_i) Wo`, one head at a time.
pub fn mha_reference(x: &Tensor<f64>, heads: &[(Tensor<f64>, Tensor<f64>, Tensor<f64>)], wo: &Tensor<f64>) -> Vec<f64> {
    let xm = mat(x);
    let t = xm.len();
    let mut cat = vec![Vec::new(); t];
    for (wq, wk, wv) in heads {
        let q = mm(&xm, &mat(wq));
        let k = mm(&xm, &mat(wk));
        let v = mm(&xm, &mat(wv));
        let d = q[0].len() as f64;
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..v[0].len() {
                cat[i].push((0..t).map(|j| e[j] / z * v[j][c]).sum());
            }
        }
    }
    mm(&cat, &mat(wo)).into_iter().flatten().collect()
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counted half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Tied-score instance with both classes present.
pub fn auc_instance(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = r.random_range(2..60);
    let levels = r.random_range(2..12);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
    (scores, labels)
}

/// Bernoulli responses from `logit = b0 + Σ b_j x_j`.
pub fn planted_logistic(r: &mut ChaCha8Rng, n: usize, intercept: f64, beta: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..beta.len()).map(|_| StandardNormal.sample(r)).collect();
        let eta = intercept + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        y.push(if r.random::<f64>() < 1.0 / (1.0 + (-eta).exp()) { 1.0 } else { 0.0 });
        x.push(row);
    }
    (x, y)
}

/// Every covariate row appears once with each label, so the labels carry
/// no information about the covariates and the exact MLE is zero.
pub fn paired_null(r: &mut ChaCha8Rng, pairs: usize, features: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::with_capacity(2 * pairs);
    let mut y = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let row: Vec<f64> = (0..features).map(|_| StandardNormal.sample(r)).collect();
        x.push(row.clone());
        y.push(1.0);
        x.push(row);
        y.push(0.0);
    }
    (x, y)
}

/// Pearson r² and MAE straight from the sums.
pub fn r2_mae(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut abs = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
        abs += (x - y).abs();
    }
    (sab * sab / (saa * sbb), abs / n)
}

/// `n` subjects with random images, alternating labels and scores that
/// lean with the label, built through the model's own scorer.
pub fn random_samples(
    model: &rcft_core::model::MultiStreamModel<f64>,
    n: usize,
    seed: u64,
) -> Vec<rcft_core::model::Sample<f64>> {
    use rcft_core::domain::{Demographics, Label, ScoreTriple, Sex};
    use rcft_core::model::ImageSet;
    let mut r = rng(seed);
    let side = model.input_size();
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Cn } else { Label::Mci };
            let mut img = || {
                let d = (0..side * side).map(|_| r.random::<f64>()).collect();
                Tensor::new(&[1, side, side], d).unwrap()
            };
            let set = ImageSet::new(img(), img(), img());
            let shift = if label == Label::Mci { -6.0 } else { 0.0 };
            let scores = ScoreTriple::clamped(
                30.0 + shift + r.random_range(-3.0..3.0),
                20.0 + shift + r.random_range(-3.0..3.0),
                18.0 + shift + r.random_range(-3.0..3.0),
            );
            let sex = if r.random_bool(0.5) { Sex::Female } else { Sex::Male };
            let demo = Demographics::new(r.random_range(60.0..85.0), sex, r.random_range(0.0..18.0)).unwrap();
            model.make_sample(&format!("R{i:03}"), &set, Some(scores), demo, label).unwrap()
        })
        .collect()
}
