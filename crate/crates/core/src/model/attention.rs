//! Multi-head self-attention over feature-map tokens and the spatial stream
//! built on top of it.

use rand::Rng;
use rcft_tensor::{Graph, Scalar, Tensor, TensorError, Var};

use super::backbone::Backbone;
use super::layers::{Builder, Linear};
use super::params::{ParamId, ParamStore, Session};
use crate::config::ModelConfig;
use crate::domain::Condition;
use crate::error::{Error, Result};

/// Row-wise `softmax(Q Kᵀ / √d_k)`; each row is a distribution over keys.
pub fn attention_weights<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var) -> Result<Var> {
    if g.shape(q).len() != 2 || g.shape(q) != g.shape(k) {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "attention",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(k).to_vec(),
        }));
    }
    let d_k = g.shape(q)[1];
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, T::of_f64(1.0 / (d_k as f64).sqrt()));
    Ok(g.softmax(logits, 1)?)
}

/// `softmax(Q Kᵀ / √d_k) V` for `T × d_k` inputs.
pub fn scaled_dot_attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    if g.shape(v) != g.shape(q) {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "attention",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(v).to_vec(),
        }));
    }
    let w = attention_weights(g, q, k)?;
    Ok(g.matmul(w, v)?)
}

#[derive(Debug, Clone, Copy)]
pub struct HeadWeights {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

/// Per-head `W_i^Q, W_i^K, W_i^V` (each `C × d_k`) and the shared `W^O`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: Vec<HeadWeights>,
    pub output: ParamId,
    pub channels: usize,
    pub d_k: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::config(format!(
                "{heads} attention heads do not divide {channels} channels"
            )));
        }
        let d_k = channels / heads;
        let heads = (0..heads)
            .map(|i| HeadWeights {
                query: b.he(format!("{name}.head{i}.wq"), &[channels, d_k], channels),
                key: b.he(format!("{name}.head{i}.wk"), &[channels, d_k], channels),
                value: b.he(format!("{name}.head{i}.wv"), &[channels, d_k], channels),
            })
            .collect::<Vec<_>>();
        let output = b.he(format!("{name}.wo"), &[channels, channels], channels);
        Ok(MultiHeadAttention {
            heads,
            output,
            channels,
            d_k,
        })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Self-attention over `tokens: [T, C]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, tokens: Var) -> Result<Var> {
        self.forward_segments(s, tokens, 1)
    }

    /// Self-attention applied independently to `images` equal row blocks of
    /// `tokens: [images·T, C]`. Projection weights are shared; attention
    /// never crosses a block boundary.
    pub fn forward_segments<T: Scalar>(&self, s: &mut Session<'_, T>, tokens: Var, images: usize) -> Result<Var> {
        let shape = s.graph.shape(tokens).to_vec();
        if shape.len() != 2 || shape[1] != self.channels || images == 0 || shape[0] % images != 0 {
            return Err(Error::Tensor(TensorError::Dimension {
                op: "multi_head_attention",
                msg: format!(
                    "expected [{images}·T, {}] tokens, got {shape:?}",
                    self.channels
                ),
            }));
        }
        let t = shape[0] / images;
        let mut head_out = Vec::with_capacity(self.heads.len());
        for hw in &self.heads {
            let wq = s.param(hw.query);
            let wk = s.param(hw.key);
            let wv = s.param(hw.value);
            let q = s.graph.matmul(tokens, wq)?;
            let k = s.graph.matmul(tokens, wk)?;
            let v = s.graph.matmul(tokens, wv)?;
            let mut per_image = Vec::with_capacity(images);
            for i in 0..images {
                if images == 1 {
                    per_image.push(scaled_dot_attention(&mut s.graph, q, k, v)?);
                    continue;
                }
                let qi = s.graph.slice(q, 0, i * t, t)?;
                let ki = s.graph.slice(k, 0, i * t, t)?;
                let vi = s.graph.slice(v, 0, i * t, t)?;
                per_image.push(scaled_dot_attention(&mut s.graph, qi, ki, vi)?);
            }
            let h = if images == 1 {
                per_image[0]
            } else {
                s.graph.concat(&per_image, 0)?
            };
            head_out.push(h);
        }
        let cat = if head_out.len() == 1 {
            head_out[0]
        } else {
            s.graph.concat(&head_out, 1)?
        };
        let wo = s.param(self.output);
        Ok(s.graph.matmul(cat, wo)?)
    }
}

/// Fixed sinusoidal position code, `[tokens, channels]`.
pub fn sinusoidal_encoding<T: Scalar>(tokens: usize, channels: usize) -> Tensor<T> {
    let mut out = Vec::with_capacity(tokens * channels);
    for p in 0..tokens {
        for c in 0..channels {
            let freq = 10000f64.powf(-((c / 2 * 2) as f64) / channels as f64);
            let a = p as f64 * freq;
            out.push(T::of_f64(if c % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Tensor::new(&[tokens, channels], out).expect("non-empty encoding")
}

/// Shared backbone → per-image attention → token mean → concatenation over
/// the three conditions → fc1 → silu → fc2.
#[derive(Debug, Clone)]
pub struct SpatialStream {
    pub backbone: Backbone,
    pub attention: MultiHeadAttention,
    pub fc1: Linear,
    pub fc2: Linear,
    pub positional_encoding: bool,
}

impl SpatialStream {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Result<Self> {
        let backbone = Backbone::new(b, &cfg.backbone)?;
        let c = cfg.backbone.out_channels();
        let attention = MultiHeadAttention::new(b, "attention", c, cfg.attention.heads)?;
        let fc1 = Linear::new(b, "spatial_head.fc1", 3 * c, cfg.attention.fc1_width, true);
        let fc2 = Linear::new(b, "spatial_head.fc2", cfg.attention.fc1_width, 2, true);
        Ok(SpatialStream {
            backbone,
            attention,
            fc1,
            fc2,
            positional_encoding: cfg.attention.positional_encoding,
        })
    }

    /// `images: [3B, 1, S, S]` ordered subject by subject, each subject's
    /// three images in condition order. Returns logits `[B, 2]`.
    pub fn logits<T: Scalar>(&self, s: &mut Session<'_, T>, images: Var) -> Result<Var> {
        let n = s.graph.shape(images)[0];
        if n % 3 != 0 {
            return Err(Error::Tensor(TensorError::Dimension {
                op: "spatial_stream",
                msg: format!("{n} images is not a whole number of subjects"),
            }));
        }
        let fmap = self.backbone.forward(s, images)?;
        let fs = s.graph.shape(fmap).to_vec();
        let (c, t) = (fs[1], fs[2] * fs[3]);
        let mut tokens = s.graph.channels_last(fmap)?;
        if self.positional_encoding {
            let pe = sinusoidal_encoding::<T>(t, c);
            let tiled = Tensor::new(&[n * t, c], pe.data().repeat(n))?;
            let pv = s.graph.constant(tiled);
            tokens = s.graph.add(tokens, pv)?;
        }
        let attended = self.attention.forward_segments(s, tokens, n)?;
        let pooled = s.graph.group_mean_rows(attended, n)?;
        // [3B, C] rows are (subject, condition); regrouping rows gives the
        // per-subject concatenation copy | immediate | delayed.
        let joined = s.graph.reshape(pooled, &[n / 3, 3 * c])?;
        let h = self.fc1.forward(s, joined)?;
        let h = s.graph.silu(h);
        self.fc2.forward(s, h)
    }

    pub fn probabilities<T: Scalar>(&self, s: &mut Session<'_, T>, images: Var) -> Result<Var> {
        let l = self.logits(s, images)?;
        Ok(s.graph.softmax(l, 1)?)
    }
}

/// The three preprocessed `[1, S, S]` images of one subject.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageSet<T: Scalar> {
    pub copy: Option<Tensor<T>>,
    pub immediate: Option<Tensor<T>>,
    pub delayed: Option<Tensor<T>>,
}

impl<T: Scalar> ImageSet<T> {
    pub fn new(copy: Tensor<T>, immediate: Tensor<T>, delayed: Tensor<T>) -> Self {
        ImageSet {
            copy: Some(copy),
            immediate: Some(immediate),
            delayed: Some(delayed),
        }
    }

    pub fn empty() -> Self {
        ImageSet {
            copy: None,
            immediate: None,
            delayed: None,
        }
    }

    pub fn set(&mut self, c: Condition, img: Tensor<T>) {
        let slot = match c {
            Condition::Copy => &mut self.copy,
            Condition::Immediate => &mut self.immediate,
            Condition::Delayed => &mut self.delayed,
        };
        *slot = Some(img);
    }

    pub fn get(&self, c: Condition) -> Option<&Tensor<T>> {
        match c {
            Condition::Copy => self.copy.as_ref(),
            Condition::Immediate => self.immediate.as_ref(),
            Condition::Delayed => self.delayed.as_ref(),
        }
    }

    /// Stacks the images into `[3, 1, S, S]`, naming the first missing one.
    pub fn stacked(&self, side: usize) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(3 * side * side);
        for c in Condition::ALL {
            let img = self
                .get(c)
                .ok_or_else(|| Error::data(format!("missing {c} image")))?;
            if img.shape() != [1, side, side] {
                return Err(Error::Tensor(TensorError::Dimension {
                    op: "spatial_stream",
                    msg: format!("{c} image must be [1, {side}, {side}], got {:?}", img.shape()),
                }));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Tensor::new(&[3, 1, side, side], data)?)
    }
}

/// `[p_CN, p_MCI]` for one subject, eval mode.
pub fn spatial_stream_forward<T: Scalar>(
    stream: &SpatialStream,
    store: &ParamStore<T>,
    images: &ImageSet<T>,
) -> Result<[T; 2]> {
    let batch = images.stacked(stream.backbone.config.input_size)?;
    let mut s = Session::eval(store);
    let x = s.graph.constant(batch);
    let p = stream.probabilities(&mut s, x)?;
    let v = s.graph.value(p);
    Ok([v[0], v[1]])
}
