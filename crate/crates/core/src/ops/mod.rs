//! The eight candidate operations in full-precision, binarized-weight and
//! 1-bit variants.

mod layers;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binarized::{BinarizeMode, BinarizedKernel};
use crate::error::{invalid, Error, Result};
use crate::tensor::{ConvSpec, Mode, PoolKind, PoolSpec, Real, Tensor};

pub use layers::{
    ActLayer, BinarizedParam, Block, ConvLayer, ConvWeights, FactorizedReduce, Layer, NamedSlot, NormLayer,
    Param, PoolLayer, Slot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    None,
    SkipConnect,
    #[serde(rename = "max_pool_3x3")]
    MaxPool3x3,
    #[serde(rename = "avg_pool_3x3")]
    AvgPool3x3,
    #[serde(rename = "sep_conv_3x3")]
    SepConv3x3,
    #[serde(rename = "sep_conv_5x5")]
    SepConv5x5,
    #[serde(rename = "dil_conv_3x3")]
    DilConv3x3,
    #[serde(rename = "dil_conv_5x5")]
    DilConv5x5,
}

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::None,
        OpKind::SkipConnect,
        OpKind::MaxPool3x3,
        OpKind::AvgPool3x3,
        OpKind::SepConv3x3,
        OpKind::SepConv5x5,
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::None => "none",
            OpKind::SkipConnect => "skip_connect",
            OpKind::MaxPool3x3 => "max_pool_3x3",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
            OpKind::SepConv3x3 => "sep_conv_3x3",
            OpKind::SepConv5x5 => "sep_conv_5x5",
            OpKind::DilConv3x3 => "dil_conv_3x3",
            OpKind::DilConv5x5 => "dil_conv_5x5",
        }
    }

    /// Whether the op owns convolution kernels.
    pub fn has_kernels(self) -> bool {
        matches!(
            self,
            OpKind::SepConv3x3 | OpKind::SepConv5x5 | OpKind::DilConv3x3 | OpKind::DilConv5x5
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid!("unknown operation '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[serde(alias = "full")]
    FullPrecision,
    /// Binarized kernels, full-precision activations.
    #[default]
    Bnn,
    /// Binarized kernels and conv inputs.
    OneBit,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::FullPrecision => "full_precision",
            Precision::Bnn => "bnn",
            Precision::OneBit => "one_bit",
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_precision" => Ok(Precision::FullPrecision),
            "bnn" => Ok(Precision::Bnn),
            "one_bit" | "1bit" => Ok(Precision::OneBit),
            _ => Err(invalid!("unknown precision '{s}'")),
        }
    }
}

/// Knobs shared by every op built for one network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpConfig {
    pub precision: Precision,
    pub binarize_mode: BinarizeMode,
    pub theta: f64,
    /// Keep the pointwise 1×1 kernels of separable/dilated convs full precision.
    pub keep_pointwise_full: bool,
}

impl Default for OpConfig {
    fn default() -> Self {
        Self {
            precision: Precision::Bnn,
            binarize_mode: BinarizeMode::Xnor,
            theta: 1e-4,
            keep_pointwise_full: false,
        }
    }
}

impl OpConfig {
    pub fn full_precision() -> Self {
        Self {
            precision: Precision::FullPrecision,
            ..Self::default()
        }
    }

    fn binarizes(&self) -> bool {
        self.precision != Precision::FullPrecision
    }

    fn signs_inputs(&self) -> bool {
        self.precision == Precision::OneBit
    }

    pub(crate) fn activation<T: Real>(&self, channels: usize) -> ActLayer<T> {
        if self.signs_inputs() {
            ActLayer::prelu(channels, T::of(0.25))
        } else {
            ActLayer::relu()
        }
    }
}

/// He-normal kernel initialization.
pub(crate) fn init_kernel<T: Real, R: Rng>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::of(normal.sample(rng))).collect()).expect("kernel shape")
}

/// Builds a conv layer, binarizing its kernel and/or input as requested.
pub(crate) fn conv_layer<T: Real, R: Rng>(
    shape: [usize; 4],
    spec: ConvSpec,
    binarize: bool,
    sign_input: bool,
    cfg: &OpConfig,
    rng: &mut R,
) -> Result<ConvLayer<T>> {
    let kernel = init_kernel(shape, rng);
    let weights = if binarize {
        ConvWeights::Binarized(BinarizedParam::new(BinarizedKernel::new(
            kernel,
            cfg.binarize_mode,
            T::of(cfg.theta),
        )?))
    } else {
        ConvWeights::Full(Param::new(kernel, true))
    };
    Ok(ConvLayer::new(weights, spec, sign_input))
}

/// Act → 1×1 conv (stride 2) ‖ shifted 1×1 conv (stride 2) → norm.
pub(crate) fn factorized_reduce<T: Real, R: Rng>(
    cin: usize,
    cout: usize,
    binarize: bool,
    cfg: &OpConfig,
    rng: &mut R,
) -> Result<FactorizedReduce<T>> {
    let half = cout / 2;
    let spec = ConvSpec::new(2, 0);
    let sign = binarize && cfg.signs_inputs();
    let a = conv_layer([half, cin, 1, 1], spec, binarize, sign, cfg, rng)?;
    let b = conv_layer([cout - half, cin, 1, 1], spec, binarize, sign, cfg, rng)?;
    Ok(FactorizedReduce::new(cfg.activation(cin), a, b, NormLayer::new(cout)))
}

/// Act → 1×1 conv → norm, used for cell input adapters.
pub(crate) fn relu_conv_bn<T: Real, R: Rng>(
    cin: usize,
    cout: usize,
    binarize: bool,
    cfg: &OpConfig,
    rng: &mut R,
) -> Result<Block<T>> {
    let sign = binarize && cfg.signs_inputs();
    Ok(Block::Sequence(vec![
        Layer::Act(cfg.activation(cin)),
        Layer::Conv(conv_layer([cout, cin, 1, 1], ConvSpec::default(), binarize, sign, cfg, rng)?),
        Layer::Norm(NormLayer::new(cout)),
    ]))
}

/// One depthwise k×k + pointwise 1×1 + norm block preceded by the activation.
fn separable_block<T: Real, R: Rng>(
    c: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    cfg: &OpConfig,
    rng: &mut R,
    layers: &mut Vec<Layer<T>>,
) -> Result<()> {
    let padding = dilation * (k - 1) / 2;
    let dw = ConvSpec::new(stride, padding).dilated(dilation).grouped(c);
    let bin = cfg.binarizes();
    let sign = cfg.signs_inputs();
    layers.push(Layer::Act(cfg.activation(c)));
    layers.push(Layer::Conv(conv_layer([c, 1, k, k], dw, bin, sign, cfg, rng)?));
    layers.push(Layer::Conv(conv_layer(
        [c, c, 1, 1],
        ConvSpec::default(),
        bin && !cfg.keep_pointwise_full,
        sign,
        cfg,
        rng,
    )?));
    layers.push(Layer::Norm(NormLayer::new(c)));
    Ok(())
}

/// A concrete candidate operation on one edge.
#[derive(Debug, Clone)]
pub struct OpInstance<T: Real = f32> {
    pub kind: OpKind,
    pub stride: usize,
    pub channels: usize,
    pub precision: Precision,
    pub block: Block<T>,
}

/// Constructs `kind` for `channels` channels. Output keeps the channel count
/// and divides the resolution by `stride` (rounding up).
pub fn build_op<T: Real, R: Rng>(
    kind: OpKind,
    channels: usize,
    stride: usize,
    cfg: &OpConfig,
    rng: &mut R,
) -> Result<OpInstance<T>> {
    if channels == 0 {
        return Err(invalid!("operation needs at least one channel"));
    }
    if stride != 1 && stride != 2 {
        return Err(invalid!("stride must be 1 or 2, got {stride}"));
    }
    let block = match kind {
        OpKind::None => Block::Zero {
            stride,
            input_shape: None,
        },
        OpKind::SkipConnect if stride == 1 => Block::Identity { seen: false },
        OpKind::SkipConnect => {
            if channels < 2 {
                return Err(invalid!("factorized reduce needs at least 2 channels"));
            }
            Block::Reduce(factorized_reduce(channels, channels, false, cfg, rng)?)
        }
        OpKind::MaxPool3x3 => Block::Sequence(vec![Layer::Pool(PoolLayer::new(PoolSpec::op(PoolKind::Max, stride)))]),
        OpKind::AvgPool3x3 => Block::Sequence(vec![Layer::Pool(PoolLayer::new(PoolSpec::op(PoolKind::Avg, stride)))]),
        OpKind::SepConv3x3 | OpKind::SepConv5x5 => {
            let k = if kind == OpKind::SepConv3x3 { 3 } else { 5 };
            let mut layers = Vec::with_capacity(8);
            separable_block(channels, k, stride, 1, cfg, rng, &mut layers)?;
            separable_block(channels, k, 1, 1, cfg, rng, &mut layers)?;
            Block::Sequence(layers)
        }
        OpKind::DilConv3x3 | OpKind::DilConv5x5 => {
            let k = if kind == OpKind::DilConv3x3 { 3 } else { 5 };
            let mut layers = Vec::with_capacity(4);
            separable_block(channels, k, stride, 2, cfg, rng, &mut layers)?;
            Block::Sequence(layers)
        }
    };
    Ok(OpInstance {
        kind,
        stride,
        channels,
        precision: cfg.precision,
        block,
    })
}

impl<T: Real> OpInstance<T> {
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if input.channels() != self.channels {
            return Err(crate::error::shape_err!(
                "{} expects {} channels, got {}",
                self.kind,
                self.channels,
                input.channels()
            ));
        }
        self.block.forward(input, mode)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.block.backward(grad_out)
    }

    pub fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a, T>>) {
        self.block.collect(prefix, out);
    }

    pub fn param_count(&self) -> usize {
        self.block.param_count()
    }

    pub fn amplitude_loss(&self) -> f64 {
        self.block.amplitude_loss()
    }

    /// Output shape for an input of `shape`.
    pub fn output_shape(&self, shape: [usize; 4]) -> [usize; 4] {
        let [n, c, h, w] = shape;
        [n, c, h.div_ceil(self.stride), w.div_ceil(self.stride)]
    }
}

/// Parameter count of `kind` computed from its composition (dense weights,
/// binarized `X`, norm affine pairs, PReLU slopes).
pub fn analytic_param_count(kind: OpKind, channels: usize, stride: usize, precision: Precision) -> usize {
    let c = channels;
    let slopes = if precision == Precision::OneBit { c } else { 0 };
    let block = |k: usize| slopes + c * k * k + c * c + 2 * c;
    match kind {
        OpKind::None | OpKind::MaxPool3x3 | OpKind::AvgPool3x3 => 0,
        OpKind::SkipConnect if stride == 1 => 0,
        OpKind::SkipConnect => slopes + c * c + 2 * c,
        OpKind::SepConv3x3 => 2 * block(3),
        OpKind::SepConv5x5 => 2 * block(5),
        OpKind::DilConv3x3 => block(3),
        OpKind::DilConv5x5 => block(5),
    }
}
