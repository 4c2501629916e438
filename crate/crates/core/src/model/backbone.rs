//! EfficientNet-style feature extractor: a strided stem followed by MBConv
//! stages, each block expand → depthwise → squeeze-excite → project.

use rand::Rng;
use rcft_tensor::{Scalar, Tensor, Var};

use super::layers::{Builder, Conv, Linear, Norm};
use super::params::{ParamStore, Session};
use crate::config::BackboneConfig;
use crate::domain::Condition;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SeBlock {
    pub reduce: Linear,
    pub expand: Linear,
}

impl SeBlock {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize, ratio: f64) -> Result<Self> {
        let squeezed = (channels as f64 * ratio).floor() as usize;
        if squeezed == 0 {
            return Err(Error::config(format!(
                "{name}: se_ratio {ratio} leaves no channels out of {channels}"
            )));
        }
        Ok(SeBlock {
            reduce: Linear::new(b, &format!("{name}.reduce"), channels, squeezed, true),
            expand: Linear::new(b, &format!("{name}.expand"), squeezed, channels, true),
        })
    }

    /// Pool → FC → silu → FC → sigmoid gate, applied per channel.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let pooled = s.graph.global_avg_pool(x)?;
        let h = self.reduce.forward(s, pooled)?;
        let h = s.graph.silu(h);
        let h = self.expand.forward(s, h)?;
        let gate = s.graph.sigmoid(h);
        Ok(s.graph.channel_scale(x, gate)?)
    }
}

#[derive(Debug, Clone)]
pub struct MbConv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Absent when the expansion factor is 1.
    pub expand: Option<(Conv, Norm)>,
    pub depthwise: Conv,
    pub dw_norm: Norm,
    pub se: SeBlock,
    pub project: Conv,
    pub proj_norm: Norm,
}

impl MbConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        expansion: usize,
        kernel: usize,
        stride: usize,
        se_ratio: f64,
    ) -> Result<Self> {
        let mid = in_ch * expansion;
        let expand = (expansion != 1).then(|| {
            (
                Conv::new(b, &format!("{name}.expand"), in_ch, mid, 1, 1, 1),
                Norm::new(b, &format!("{name}.expand_bn"), mid),
            )
        });
        let depthwise = Conv::new(b, &format!("{name}.dw"), mid, mid, kernel, stride, mid);
        let dw_norm = Norm::new(b, &format!("{name}.dw_bn"), mid);
        let se = SeBlock::new(b, &format!("{name}.se"), mid, se_ratio)?;
        let project = Conv::new(b, &format!("{name}.project"), mid, out_ch, 1, 1, 1);
        let proj_norm = Norm::new(b, &format!("{name}.project_bn"), out_ch);
        Ok(MbConv {
            in_channels: in_ch,
            out_channels: out_ch,
            stride,
            expand,
            depthwise,
            dw_norm,
            se,
            project,
            proj_norm,
        })
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let c = s.graph.shape(x).get(1).copied();
        if s.graph.shape(x).len() != 4 || c != Some(self.in_channels) {
            return Err(Error::Tensor(rcft_tensor::TensorError::Dimension {
                op: "mbconv",
                msg: format!(
                    "expected [N, {}, H, W], got {:?}",
                    self.in_channels,
                    s.graph.shape(x)
                ),
            }));
        }
        let mut h = x;
        if let Some((conv, norm)) = &self.expand {
            h = conv.forward(s, h)?;
            h = norm.forward(s, h)?;
            h = s.graph.silu(h);
        }
        h = self.depthwise.forward(s, h)?;
        h = self.dw_norm.forward(s, h)?;
        h = s.graph.silu(h);
        h = self.se.forward(s, h)?;
        h = self.project.forward(s, h)?;
        h = self.proj_norm.forward(s, h)?;
        if self.has_residual() {
            h = s.graph.add(h, x)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stem: Conv,
    pub stem_norm: Norm,
    pub blocks: Vec<MbConv>,
}

impl Backbone {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let stem = Conv::new(b, "backbone.stem", 1, config.stem_channels, 3, 2, 1);
        let stem_norm = Norm::new(b, "backbone.stem_bn", config.stem_channels);
        let mut blocks = Vec::with_capacity(config.block_count());
        let mut in_ch = config.stem_channels;
        for (si, st) in config.stages.iter().enumerate() {
            for r in 0..st.repeats {
                let stride = if r == 0 { st.stride } else { 1 };
                blocks.push(MbConv::new(
                    b,
                    &format!("backbone.s{si}.b{r}"),
                    in_ch,
                    st.out_channels,
                    st.expansion,
                    st.kernel,
                    stride,
                    config.se_ratio,
                )?);
                in_ch = st.out_channels;
            }
        }
        Ok(Backbone {
            config: config.clone(),
            stem,
            stem_norm,
            blocks,
        })
    }

    /// `[N, 1, S, S] -> [N, C, S/stride, S/stride]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, images: Var) -> Result<Var> {
        let shape = s.graph.shape(images);
        let side = self.config.input_size;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != side || shape[3] != side {
            return Err(Error::Tensor(rcft_tensor::TensorError::Dimension {
                op: "backbone",
                msg: format!("expected [N, 1, {side}, {side}], got {shape:?}"),
            }));
        }
        let mut h = self.stem.forward(s, images)?;
        h = self.stem_norm.forward(s, h)?;
        h = s.graph.silu(h);
        for block in &self.blocks {
            h = block.forward(s, h)?;
        }
        Ok(h)
    }
}

/// One image's `C × H × W` feature map, tagged with its drawing condition.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Scalar> {
    pub tensor: Tensor<T>,
    pub condition: Condition,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }
}

/// Runs one `[1, S, S]` image through the backbone in eval mode.
pub fn backbone_forward<T: Scalar>(
    backbone: &Backbone,
    store: &ParamStore<T>,
    image: &Tensor<T>,
    condition: Condition,
) -> Result<FeatureMap<T>> {
    let side = backbone.config.input_size;
    if image.shape() != [1, side, side] {
        return Err(Error::Tensor(rcft_tensor::TensorError::Dimension {
            op: "backbone_forward",
            msg: format!("{condition} image must be [1, {side}, {side}], got {:?}", image.shape()),
        }));
    }
    let mut s = Session::eval(store);
    let x = s.graph.constant(image.reshape(&[1, 1, side, side])?);
    let y = backbone.forward(&mut s, x)?;
    let shape = s.graph.shape(y)[1..].to_vec();
    let tensor = Tensor::new(&shape, s.graph.value(y).to_vec())?;
    Ok(FeatureMap { tensor, condition })
}

/// `C × H × W -> (H·W) × C`. Token `i·W + j` is the channel vector at `(i, j)`.
pub fn flatten_tokens<T: Scalar>(fm: &FeatureMap<T>) -> Tensor<T> {
    let (c, hw) = (fm.channels(), fm.height() * fm.width());
    let src = fm.tensor.data();
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        for p in 0..hw {
            out[p * c + ch] = src[ch * hw + p];
        }
    }
    Tensor::new(&[hw, c], out).expect("feature map is non-empty")
}

/// Inverse of [`flatten_tokens`] for a known spatial extent.
pub fn unflatten_tokens<T: Scalar>(
    tokens: &Tensor<T>,
    height: usize,
    width: usize,
    condition: Condition,
) -> Result<FeatureMap<T>> {
    let hw = height * width;
    if tokens.ndim() != 2 || tokens.shape()[0] != hw {
        return Err(Error::Tensor(rcft_tensor::TensorError::Dimension {
            op: "unflatten_tokens",
            msg: format!("{:?} tokens do not fill a {height}×{width} map", tokens.shape()),
        }));
    }
    let c = tokens.shape()[1];
    let src = tokens.data();
    let mut out = vec![T::zero(); c * hw];
    for p in 0..hw {
        for ch in 0..c {
            out[ch * hw + p] = src[p * c + ch];
        }
    }
    Ok(FeatureMap {
        tensor: Tensor::new(&[c, height, width], out)?,
        condition,
    })
}
