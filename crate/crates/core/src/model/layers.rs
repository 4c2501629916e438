use rand::Rng;
use rcft_tensor::{Scalar, Tensor, Var};

use super::params::{he_normal, ParamId, ParamStore, Role, Session};
use crate::error::Result;

/// Registers freshly initialized parameters under a name prefix.
pub struct Builder<'a, T: Scalar, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<'a, T: Scalar, R: Rng> Builder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Builder { store, rng }
    }

    pub fn he(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let t = he_normal(self.rng, shape, fan_in);
        self.store.add(name, Role::Trainable, t)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add(name, Role::Trainable, Tensor::zeros(shape))
    }
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, inp: usize, out: usize, bias: bool) -> Self {
        let weight = b.he(format!("{name}.weight"), &[inp, out], inp);
        let bias = bias.then(|| b.zeros(format!("{name}.bias"), &[out]));
        Linear {
            weight,
            bias,
            in_features: inp,
            out_features: out,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let mut y = s.graph.matmul(x, w)?;
        if let Some(b) = self.bias {
            let bv = s.param(b);
            y = s.graph.add_bias(y, bv)?;
        }
        Ok(y)
    }
}

/// Bias-free 2-D convolution with "same"-style padding `kernel / 2`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub kernel: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Self {
        let per_group = in_ch / groups;
        let kernel = b.he(format!("{name}.kernel"), &[out_ch, per_group, k, k], per_group * k * k);
        Conv {
            kernel,
            stride,
            padding: k / 2,
            groups,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let k = s.param(self.kernel);
        Ok(s.graph.conv2d(x, k, self.stride, self.padding, self.groups)?)
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: ParamId,
}

impl Norm {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize) -> Self {
        let gamma = b.store.add(format!("{name}.gamma"), Role::Trainable, Tensor::ones(&[channels]));
        let beta = b.store.add(format!("{name}.beta"), Role::Trainable, Tensor::zeros(&[channels]));
        let mut stats = Tensor::zeros(&[2, channels]);
        stats.data_mut()[channels..].iter_mut().for_each(|v| *v = T::one());
        let stats = b.store.add(format!("{name}.running"), Role::Buffer, stats);
        Norm { gamma, beta, stats }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        s.batch_norm(x, self.gamma, self.beta, self.stats)
    }
}
