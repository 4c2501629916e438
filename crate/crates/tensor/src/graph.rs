//! Tape of primitive operations with a single reverse sweep.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch-norm epsilon added to the variance.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in the exponential moving average.
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T: Scalar> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    initialized: bool,
}

impl<T: Scalar> BnState<T> {
    /// Zero mean, unit variance.
    pub fn new(channels: usize) -> Self {
        BnState {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            initialized: true,
        }
    }

    pub fn uninitialized(channels: usize) -> Self {
        BnState {
            mean: vec![T::zero(); channels],
            var: vec![T::zero(); channels],
            initialized: false,
        }
    }

    pub fn from_parts(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bn_state",
                lhs: vec![mean.len()],
                rhs: vec![var.len()],
            });
        }
        Ok(BnState {
            mean,
            var,
            initialized: true,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Silu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    MeanRows {
        x: Var,
        groups: usize,
    },
    ChannelsLast(Var),
    GlobalAvgPool(Var),
    ChannelScale(Var, Var),
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Bce {
        p: Var,
        targets: Vec<T>,
    },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Silu(_) => "silu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanRows { .. } => "mean_rows",
            Op::ChannelsLast(_) => "channels_last",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::ChannelScale(..) => "channel_scale",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Bce { .. } => "bce",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T: Scalar> {
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
    grad: Option<Vec<T>>,
}

/// Ordered record of primitive operations. Node indices are topologically
/// sorted by construction: every input precedes its consumer.
#[derive(Debug, Clone, Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), rg, Op::Leaf)
    }

    /// Records an untracked leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), false, Op::Leaf)
    }

    /// Records a copy of `t` as a leaf, tracking it iff `t.requires_grad()`.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by [`Graph::backward`]; `None` for untracked values
    /// or values the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Value (with gradient attached, if any) as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        let mut t = Tensor::new(&n.shape, n.value.clone())
            .expect("graph node shapes are validated on construction")
            .with_requires_grad(n.requires_grad);
        if let Some(g) = &n.grad {
            t.set_grad(g.clone()).expect("grad shape matches value");
        }
        t
    }

    pub fn check_finite(&self, v: Var) -> Result<()> {
        let n = &self.nodes[v.0];
        if n.value.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite(format!("{} (node {})", n.op.name(), v.0)))
        }
    }

    /// Clears gradients so the graph can be differentiated again.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn rank(&self, op: &'static str, v: Var, rank: usize) -> Result<()> {
        if self.shape(v).len() != rank {
            return Err(TensorError::dim(
                op,
                format!("expected rank {rank}, got shape {:?}", self.shape(v)),
            ));
        }
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.rank("matmul", a, 2)?;
        self.rank("matmul", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.rank("transpose", a, 2)?;
        let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
        let src = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, m], out, rg, Op::Transpose(a)))
    }

    // ---- elementwise ----------------------------------------------------

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, rg, Op::Scale(a, s))
    }

    /// Adds a vector of length equal to the last axis of `a` to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(a).last().unwrap_or(&0);
        if self.shape(bias) != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.rg(&[a, bias]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::AddBias(a, bias)))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|&x| x * kernels::sigmoid(x))
            .collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, rg, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::sigmoid(x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, rg, Op::Sigmoid(a))
    }

    /// Numerically stable softmax along `axis` (max subtracted first).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::dim(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let out = kernels::softmax_forward(self.value(a), &shape, axis);
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, rg, Op::Softmax { x: a, axis }))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.iter().copied().sum();
        let m = s / T::of_f64(v.len() as f64);
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![m], rg, Op::Mean(a))
    }

    /// Column means of a `[rows, cols]` matrix as a `[1, cols]` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.group_mean_rows(a, 1)
    }

    /// `[G·r, c] -> [G, c]`: mean over each consecutive block of `r` rows.
    pub fn group_mean_rows(&mut self, a: Var, groups: usize) -> Result<Var> {
        self.rank("mean_rows", a, 2)?;
        let (rows, c) = (self.shape(a)[0], self.shape(a)[1]);
        if groups == 0 || rows % groups != 0 {
            return Err(TensorError::dim(
                "mean_rows",
                format!("{rows} rows do not split into {groups} groups"),
            ));
        }
        let r = rows / groups;
        let inv = T::one() / T::of_f64(r as f64);
        let mut out = vec![T::zero(); groups * c];
        for (dst, block) in out.chunks_mut(c).zip(self.value(a).chunks(r * c)) {
            for row in block.chunks(c) {
                add_into(dst, row);
            }
            dst.iter_mut().for_each(|x| *x = *x * inv);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![groups, c], out, rg, Op::MeanRows { x: a, groups }))
    }

    /// `[N, C, H, W] -> [N·H·W, C]`: one row per spatial position, scanned
    /// image by image and row-major within an image.
    pub fn channels_last(&mut self, a: Var) -> Result<Var> {
        self.rank("channels_last", a, 4)?;
        let s = self.shape(a).to_vec();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let src = self.value(a);
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for ch in 0..c {
                let plane = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (p, &v) in plane.iter().enumerate() {
                    out[(b * hw + p) * c + ch] = v;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n * hw, c], out, rg, Op::ChannelsLast(a)))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        self.rank("global_avg_pool", a, 4)?;
        let s = self.shape(a).to_vec();
        let hw = s[2] * s[3];
        let inv = T::one() / T::of_f64(hw as f64);
        let out = self
            .value(a)
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![s[0], s[1]], out, rg, Op::GlobalAvgPool(a)))
    }

    /// Multiplies each `[H, W]` plane of `x: [N, C, H, W]` by `gate[n, c]`.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        self.rank("channel_scale", x, 4)?;
        let s = self.shape(x).to_vec();
        if self.shape(gate) != [s[0], s[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "channel_scale",
                lhs: s,
                rhs: self.shape(gate).to_vec(),
            });
        }
        let hw = s[2] * s[3];
        let g = self.value(gate);
        let out = self
            .value(x)
            .chunks(hw)
            .zip(g)
            .flat_map(|(p, &gv)| p.iter().map(move |&v| v * gv))
            .collect();
        let rg = self.rg(&[x, gate]);
        Ok(self.push(s, out, rg, Op::ChannelScale(x, gate)))
    }

    // ---- layout ---------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), out, rg, Op::Reshape(a)))
    }

    /// Sub-range `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::dim(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, ext, inner) = kernels::axis_split(&shape, axis);
        let src = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(new_shape, out, rg, Op::Slice { x: a, axis, start }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| TensorError::dim("concat", "no inputs"))?;
        let base_shape = self.shape(first).to_vec();
        if axis >= base_shape.len() {
            return Err(TensorError::dim("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base_shape,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let ext = self.shape(v)[axis];
                let chunk = ext * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    // ---- convolution & normalization -------------------------------------

    /// 2-D cross-correlation of `x: [N, C, H, W]` with `kernel: [O, C/groups, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize, groups: usize) -> Result<Var> {
        self.rank("conv2d", x, 4)?;
        self.rank("conv2d", kernel, 4)?;
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if groups == 0 || stride == 0 {
            return Err(TensorError::dim("conv2d", "stride and groups must be positive"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if c % groups != 0 || o % groups != 0 {
            return Err(TensorError::dim(
                "conv2d",
                format!("channels in={c} out={o} not divisible by groups={groups}"),
            ));
        }
        if kc != c / groups {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        let (Some(oh), Some(ow)) = (
            kernels::conv_output_size(h, kh, stride, padding),
            kernels::conv_output_size(w, kw, stride, padding),
        ) else {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"),
            ));
        };
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad: padding,
            groups,
            oh,
            ow,
        };
        let out = kernels::conv2d_forward(self.value(x), self.value(kernel), &geom);
        let rg = self.rg(&[x, kernel]);
        Ok(self.push(vec![n, o, oh, ow], out, rg, Op::Conv2d { x, k: kernel, geom }))
    }

    /// Per-channel normalization of `x: [N, C, H, W]`.
    ///
    /// Train mode normalizes with batch statistics and updates `state`; when
    /// the batch holds a single value per channel it uses the running
    /// statistics instead and leaves `state` untouched.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState<T>,
        mode: BnMode,
    ) -> Result<Var> {
        self.rank("batch_norm", x, 4)?;
        let xs = self.shape(x).to_vec();
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        for v in [gamma, beta] {
            if self.shape(v) != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "batch_norm",
                    lhs: xs.clone(),
                    rhs: self.shape(v).to_vec(),
                });
            }
        }
        if state.channels() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: xs,
                rhs: vec![state.channels()],
            });
        }
        let count = n * hw;
        let batch_stats = mode == BnMode::Train && count > 1;
        if !batch_stats && !state.is_initialized() {
            return Err(TensorError::State(
                "batch_norm running statistics are uninitialized".into(),
            ));
        }
        let eps = T::of_f64(BN_EPS);
        let xv = self.value(x);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if batch_stats {
            let inv = T::one() / T::of_f64(count as f64);
            for (i, plane) in xv.chunks(hw).enumerate() {
                let ch = i % c;
                mean[ch] = mean[ch] + plane.iter().copied().sum::<T>();
            }
            mean.iter_mut().for_each(|m| *m = *m * inv);
            for (i, plane) in xv.chunks(hw).enumerate() {
                let ch = i % c;
                let m = mean[ch];
                var[ch] = var[ch] + plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
            var.iter_mut().for_each(|v| *v = *v * inv);
        } else {
            mean.copy_from_slice(&state.mean);
            var.copy_from_slice(&state.var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for (i, plane) in xv.chunks(hw).enumerate() {
            let ch = i % c;
            for &v in plane {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(gv[ch] * h + bv[ch]);
            }
        }
        if batch_stats {
            let mom = T::of_f64(BN_MOMENTUM);
            let unbias = T::of_f64(count as f64 / (count as f64 - 1.0));
            for ch in 0..c {
                state.mean[ch] = mom * state.mean[ch] + (T::one() - mom) * mean[ch];
                state.var[ch] = mom * state.var[ch] + (T::one() - mom) * var[ch] * unbias;
            }
            state.initialized = true;
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            xs,
            out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    // ---- loss -----------------------------------------------------------

    /// Mean binary cross-entropy of probabilities `p` against 0/1 `targets`.
    /// Probabilities are clipped to `[1e-7, 1 - 1e-7]` before the log.
    pub fn bce(&mut self, p: Var, targets: &[T]) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                lhs: self.shape(p).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(bad) = targets.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(TensorError::Contract(format!("bce target {bad} not in {{0, 1}}")));
        }
        let lo = T::of_f64(1e-7);
        let hi = T::one() - lo;
        let mut total = T::zero();
        for (&pi, &y) in pv.iter().zip(targets) {
            let pc = pi.max(lo).min(hi);
            total = total - (y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
        }
        let loss = total / T::of_f64(targets.len() as f64);
        let rg = self.rg(&[p]);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
        ))
    }

    // ---- reverse sweep --------------------------------------------------

    /// Populates gradients of every tracked value the scalar `loss` depends on.
    /// Fan-out accumulates additively. A graph supports one backward pass
    /// until [`Graph::zero_grads`] is called.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.backward_done {
            return Err(TensorError::Contract(
                "backward already ran on this graph; call zero_grads first".into(),
            ));
        }
        self.check_finite(loss)?;
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = g;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        // Returns the gradient buffer of `v`, or None if `v` is untracked.
        fn slot<'a, T: Scalar>(
            nodes: &[Node<T>],
            grads: &'a mut [Option<Vec<T>>],
            v: Var,
        ) -> Option<&'a mut Vec<T>> {
            let n = &nodes[v.0];
            if !n.requires_grad {
                return None;
            }
            Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]))
        }
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if let Some(ga) = slot(nodes, grads, *a) {
                    kernels::matmul_a_bt_acc(g, &nodes[b.0].value, ga, m, k, n);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    kernels::matmul_at_b_acc(&nodes[a.0].value, g, gb, m, k, n);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                if let Some(ga) = slot(nodes, grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d = *d - s;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, &s), &bv) in ga.iter_mut().zip(g).zip(&nodes[b.0].value) {
                        *d = *d + s * bv;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((d, &s), &av) in gb.iter_mut().zip(g).zip(&nodes[a.0].value) {
                        *d = *d + s * av;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (d, &gv) in ga.iter_mut().zip(g) {
                        *d = *d + gv * *s;
                    }
                }
            }
            Op::AddBias(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    add_into(ga, g);
                }
                let n = nodes[b.0].value.len();
                if let Some(gb) = slot(nodes, grads, *b) {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Conv2d { x, k, geom } => {
                let xv = &nodes[x.0].value;
                let kv = &nodes[k.0].value;
                // both slots may be needed at once; take them out of `grads` temporarily
                let mut gx = slot(nodes, grads, *x).map(std::mem::take);
                let mut gk = slot(nodes, grads, *k).map(std::mem::take);
                kernels::conv2d_backward(xv, kv, g, geom, gx.as_deref_mut(), gk.as_deref_mut());
                if let Some(v) = gx {
                    grads[x.0] = Some(v);
                }
                if let Some(v) = gk {
                    grads[k.0] = Some(v);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = nodes[gamma.0].value.len();
                let hw = nodes[x.0].shape[2] * nodes[x.0].shape[3];
                let gam = &nodes[gamma.0].value;
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (gp, hp)) in g.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let ch = i % c;
                    for (&gv, &hv) in gp.iter().zip(hp) {
                        sum_g[ch] = sum_g[ch] + gv;
                        sum_gx[ch] = sum_gx[ch] + gv * hv;
                    }
                }
                if let Some(gg) = slot(nodes, grads, *gamma) {
                    add_into(gg, &sum_gx);
                }
                if let Some(gb) = slot(nodes, grads, *beta) {
                    add_into(gb, &sum_g);
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    if *batch_stats {
                        let m = T::of_f64((g.len() / c) as f64);
                        for (i, ((dst, gp), hp)) in gx
                            .chunks_mut(hw)
                            .zip(g.chunks(hw))
                            .zip(xhat.chunks(hw))
                            .enumerate()
                        {
                            let ch = i % c;
                            let scale = gam[ch] * inv_std[ch] / m;
                            for ((d, &gv), &hv) in dst.iter_mut().zip(gp).zip(hp) {
                                *d = *d + scale * (m * gv - sum_g[ch] - hv * sum_gx[ch]);
                            }
                        }
                    } else {
                        for (i, (dst, gp)) in gx.chunks_mut(hw).zip(g.chunks(hw)).enumerate() {
                            let ch = i % c;
                            let scale = gam[ch] * inv_std[ch];
                            for (d, &gv) in dst.iter_mut().zip(gp) {
                                *d = *d + scale * gv;
                            }
                        }
                    }
                }
            }
            Op::Silu(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, &gv), &x) in ga.iter_mut().zip(g).zip(&nodes[a.0].value) {
                        let s = kernels::sigmoid(x);
                        *d = *d + gv * s * (T::one() + x * (T::one() - s));
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *d = *d + gv * y * (T::one() - y);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    kernels::softmax_backward(&node.value, g, &node.shape, *axis, gx);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let s = g[0] / T::of_f64(ga.len() as f64);
                    ga.iter_mut().for_each(|d| *d = *d + s);
                }
            }
            Op::MeanRows { x, groups } => {
                let c = nodes[x.0].shape[1];
                let r = nodes[x.0].shape[0] / groups;
                if let Some(gx) = slot(nodes, grads, *x) {
                    let inv = T::one() / T::of_f64(r as f64);
                    for (block, gg) in gx.chunks_mut(r * c).zip(g.chunks(c)) {
                        for row in block.chunks_mut(c) {
                            for (d, &gv) in row.iter_mut().zip(gg) {
                                *d = *d + gv * inv;
                            }
                        }
                    }
                }
            }
            Op::ChannelsLast(a) => {
                let s = &nodes[a.0].shape;
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                if let Some(ga) = slot(nodes, grads, *a) {
                    for b in 0..n {
                        for ch in 0..c {
                            for p in 0..hw {
                                let d = &mut ga[(b * c + ch) * hw + p];
                                *d = *d + g[(b * hw + p) * c + ch];
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool(a) => {
                let hw = nodes[a.0].shape[2] * nodes[a.0].shape[3];
                if let Some(ga) = slot(nodes, grads, *a) {
                    let inv = T::one() / T::of_f64(hw as f64);
                    for (plane, &gv) in ga.chunks_mut(hw).zip(g) {
                        let s = gv * inv;
                        plane.iter_mut().for_each(|d| *d = *d + s);
                    }
                }
            }
            Op::ChannelScale(x, gate) => {
                let hw = nodes[x.0].shape[2] * nodes[x.0].shape[3];
                let xv = &nodes[x.0].value;
                let gv = &nodes[gate.0].value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((dst, gp), &s) in gx.chunks_mut(hw).zip(g.chunks(hw)).zip(gv) {
                        for (d, &gg) in dst.iter_mut().zip(gp) {
                            *d = *d + gg * s;
                        }
                    }
                }
                if let Some(gs) = slot(nodes, grads, *gate) {
                    for ((d, gp), xp) in gs.iter_mut().zip(g.chunks(hw)).zip(xv.chunks(hw)) {
                        *d = *d + gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = &nodes[x.0].shape;
                let (outer, ext, inner) = kernels::axis_split(shape, *axis);
                let len = node.shape[*axis];
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        let base = o * ext * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        add_into(&mut gx[base..base + len * inner], src);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = kernels::axis_split(&node.shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let ext = nodes[v.0].shape[*axis];
                    if let Some(gv) = slot(nodes, grads, *v) {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            add_into(
                                &mut gv[o * ext * inner..(o + 1) * ext * inner],
                                &g[src..src + ext * inner],
                            );
                        }
                    }
                    offset += ext;
                }
            }
            Op::Bce { p, targets } => {
                let pv = &nodes[p.0].value;
                if let Some(gp) = slot(nodes, grads, *p) {
                    let lo = T::of_f64(1e-7);
                    let hi = T::one() - lo;
                    let n = T::of_f64(targets.len() as f64);
                    for ((d, &pi), &y) in gp.iter_mut().zip(pv).zip(targets) {
                        if pi < lo || pi > hi {
                            continue;
                        }
                        let dl = -y / pi + (T::one() - y) / (T::one() - pi);
                        *d = *d + g[0] * dl / n;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_small_case() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 2], &[5., 6., 7., 8.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_identity_and_mismatch() {
        let mut g = Graph::new();
        let i3 = g.constant(Tensor::eye(3));
        let b = g.constant(t(&[3, 2], &[1., -2., 3.5, 4., 0., 7.]));
        let c = g.matmul(i3, b).unwrap();
        assert_eq!(g.value(c), g.value(b));
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let y = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(x, y).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
    }

    #[test]
    fn conv_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = g.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = g.conv2d(x, k, 1, 0, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let ones = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k2 = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = g.conv2d(ones, k2, 1, 0, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y), &[4., 4., 4., 4.]);

        let x4 = g.constant(Tensor::ones(&[1, 1, 4, 4]));
        let y = g.conv2d(x4, k2, 2, 0, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    }

    #[test]
    fn conv_rejects_bad_groups_and_fit() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::<f64>::ones(&[1, 3, 4, 4]));
        let k = g.constant(Tensor::ones(&[4, 1, 3, 3]));
        assert!(g.conv2d(x, k, 1, 1, 2).is_err());
        let k = g.constant(Tensor::ones(&[3, 3, 5, 5]));
        assert!(g.conv2d(x, k, 1, 0, 1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0., 0.]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y), &[0.5, 0.5]);
        let x = g.constant(t(&[3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]));
        let y = g.softmax(x, 0).unwrap();
        for (a, b) in g.value(y).iter().zip([1. / 6., 2. / 6., 3. / 6.]) {
            assert!((a - b).abs() < 1e-15);
        }
        let x = g.constant(t(&[1, 3], &[1e4, -1e4, 0.]));
        let y = g.softmax(x, 1).unwrap();
        assert!(g.value(y).iter().all(|v| v.is_finite()));
        assert!(g.softmax(x, 2).is_err());
    }

    #[test]
    fn silu_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0., 20., -20.]));
        let y = g.silu(x);
        let v = g.value(y);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 20.0).abs() < 1e-6);
        assert!(v[2].abs() < 1e-6);
    }

    #[test]
    fn batch_norm_examples() {
        let mut g = Graph::new();
        let mut x = Tensor::<f64>::zeros(&[2, 2, 2, 2]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            // channel 0 constant 3, channel 1 constant -1
            *v = if (i / 4) % 2 == 0 { 3.0 } else { -1.0 };
        }
        let xv = g.constant(x.clone());
        let gamma = g.constant(Tensor::ones(&[2]));
        let beta = g.constant(Tensor::zeros(&[2]));
        let mut st = BnState::new(2);
        let y = g.batch_norm(xv, gamma, beta, &mut st, BnMode::Train).unwrap();
        assert!(g.value(y).iter().all(|v| v.abs() < 1e-2));

        let gamma0 = g.constant(Tensor::zeros(&[2]));
        let beta_b = g.constant(t(&[2], &[0.25, -4.0]));
        let mut st = BnState::new(2);
        let y = g.batch_norm(xv, gamma0, beta_b, &mut st, BnMode::Train).unwrap();
        for (i, v) in g.value(y).iter().enumerate() {
            let want = if (i / 4) % 2 == 0 { 0.25 } else { -4.0 };
            assert_eq!(*v, want);
        }

        let mut st = BnState::from_parts(vec![0.5, -0.5], vec![2.0, 0.5]).unwrap();
        let y1 = g.batch_norm(xv, gamma, beta, &mut st, BnMode::Eval).unwrap();
        let y2 = g.batch_norm(xv, gamma, beta, &mut st, BnMode::Eval).unwrap();
        assert_eq!(g.value(y1), g.value(y2));
        assert_eq!(st.mean, vec![0.5, -0.5]);

        let mut un = BnState::uninitialized(2);
        assert!(matches!(
            g.batch_norm(xv, gamma, beta, &mut un, BnMode::Eval),
            Err(TensorError::State(_))
        ));
    }

    #[test]
    fn batch_norm_single_value_uses_running_stats() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1, 1], &[2.0]));
        let gamma = g.constant(Tensor::ones(&[1]));
        let beta = g.constant(Tensor::zeros(&[1]));
        let mut st = BnState::from_parts(vec![1.0], vec![4.0]).unwrap();
        let y = g.batch_norm(x, gamma, beta, &mut st, BnMode::Train).unwrap();
        assert!((g.value(y)[0] - 1.0 / (4.0f64 + BN_EPS).sqrt()).abs() < 1e-12);
        assert_eq!(st.mean, vec![1.0]);
        assert_eq!(st.var, vec![4.0]);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 1, 1, 1], &[1.0, 3.0]));
        let gamma = g.constant(Tensor::ones(&[1]));
        let beta = g.constant(Tensor::zeros(&[1]));
        let mut st = BnState::new(1);
        g.batch_norm(x, gamma, beta, &mut st, BnMode::Train).unwrap();
        // batch mean 2, unbiased var 2
        assert!((st.mean[0] - 0.2).abs() < 1e-15);
        assert!((st.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn backward_linear_and_square() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1., -2., 0.5]).with_requires_grad(true));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1., 1., 1.]);

        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1., -2., 0.5]).with_requires_grad(true));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2., -4., 1.]);
    }

    #[test]
    fn backward_contracts() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1., 2.]).with_requires_grad(true));
        let frozen = g.leaf(t(&[2], &[3., 4.]));
        let y = g.mul(x, frozen).unwrap();
        assert!(matches!(g.backward(y), Err(TensorError::Contract(_))));
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(frozen).is_none());
        assert_eq!(g.grad(x).unwrap(), &[3., 4.]);
        assert!(g.backward(s).is_err());
        g.zero_grads();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3., 4.]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(u) + sum(u * x) with u = 3x: dloss/dx = 3 + 6x
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, -0.5]).with_requires_grad(true));
        let u = g.scale(x, 3.0);
        let a = g.sum(u);
        let ux = g.mul(u, x).unwrap();
        let b = g.sum(ux);
        let l = g.add(a, b).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[9.0, 0.0]);
    }

    #[test]
    fn nan_loss_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1], &[f64::NAN]).with_requires_grad(true));
        let s = g.sum(x);
        assert!(matches!(g.backward(s), Err(TensorError::NonFinite(_))));
    }

    #[test]
    fn bce_values_and_target_contract() {
        let mut g = Graph::new();
        let p = g.constant(t(&[3], &[0.5, 0.5, 0.25]));
        let l = g.bce(p, &[0.0, 1.0, 1.0]).unwrap();
        let want = (2.0 * 2f64.ln() - 0.25f64.ln()) / 3.0;
        assert!((g.value(l)[0] - want).abs() < 1e-12);
        let p1 = g.constant(t(&[1], &[1.0 - 1e-7]));
        let l = g.bce(p1, &[1.0]).unwrap();
        assert!((g.value(l)[0] - 1e-7).abs() < 1e-9);
        assert!(matches!(g.bce(p1, &[2.0]), Err(TensorError::Contract(_))));
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[0., 1., 2., 3., 4., 5.]));
        let a = g.slice(x, 1, 0, 1).unwrap();
        let b = g.slice(x, 1, 1, 2).unwrap();
        assert_eq!(g.value(a), &[0., 3.]);
        assert_eq!(g.value(b), &[1., 2., 4., 5.]);
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), g.value(x));
        let r = g.concat(&[x, x], 0).unwrap();
        assert_eq!(g.shape(r), &[4, 3]);
    }

    #[test]
    fn channels_last_layout_and_group_means() {
        let mut g = Graph::new();
        // one image, C=2, 2×2 map
        let x = g.constant(t(&[1, 2, 2, 2], &[1., 2., 3., 4., 10., 20., 30., 40.]));
        let tok = g.channels_last(x).unwrap();
        assert_eq!(g.shape(tok), &[4, 2]);
        assert_eq!(g.value(tok), &[1., 10., 2., 20., 3., 30., 4., 40.]);
        let m = g.group_mean_rows(tok, 2).unwrap();
        assert_eq!(g.value(m), &[1.5, 15., 3.5, 35.]);
        assert!(g.group_mean_rows(tok, 3).is_err());
    }
}
