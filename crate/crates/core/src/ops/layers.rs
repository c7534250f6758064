//! Layer building blocks with cached forward state and manual backward.

use crate::binarized::{binarize_activation, binarize_activation_backward, BinarizedKernel};
use crate::error::{Error, Result};
use crate::tensor::{
    batch_norm, batch_norm_backward, concat_channels, conv2d, conv2d_backward, pool2d, pool2d_backward,
    prelu, prelu_backward, relu, relu_backward, shift_down_right, shift_down_right_backward,
    slice_channels, BatchNormCache, ConvSpec, Mode, PoolSpec, Real, RunningStats, Tensor,
};

/// A dense trainable tensor with its gradient and momentum buffer.
#[derive(Debug, Clone)]
pub struct Param<T: Real = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
    /// Whether weight decay applies.
    pub decay: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>, decay: bool) -> Self {
        let shape = value.shape();
        Self {
            value,
            grad: Tensor::zeros(shape),
            velocity: Tensor::zeros(shape),
            decay,
        }
    }

    pub fn vector(values: Vec<T>, decay: bool) -> Self {
        let n = values.len();
        Self::new(Tensor::from_vec([n, 1, 1, 1], values).expect("vector shape"), decay)
    }

    fn accumulate(&mut self, grad: &Tensor<T>) {
        for (g, &v) in self.grad.data_mut().iter_mut().zip(grad.data()) {
            *g = *g + v;
        }
    }

    fn accumulate_slice(&mut self, grad: &[T]) {
        for (g, &v) in self.grad.data_mut().iter_mut().zip(grad) {
            *g = *g + v;
        }
    }
}

/// A binarized kernel together with its accumulated `∂L_S/∂X̂` and momentum buffers.
#[derive(Debug, Clone)]
pub struct BinarizedParam<T: Real = f32> {
    pub kernel: BinarizedKernel<T>,
    pub grad_xhat: Tensor<T>,
    pub velocity_x: Tensor<T>,
    pub velocity_a: Vec<T>,
}

impl<T: Real> BinarizedParam<T> {
    pub fn new(kernel: BinarizedKernel<T>) -> Self {
        let shape = kernel.weights().shape();
        let slice = kernel.amplitude().len();
        Self {
            kernel,
            grad_xhat: Tensor::zeros(shape),
            velocity_x: Tensor::zeros(shape),
            velocity_a: vec![T::zero(); slice],
        }
    }
}

/// Mutable view of one piece of model state, handed out by `collect_state`.
pub enum Slot<'a, T: Real = f32> {
    Dense(&'a mut Param<T>),
    Binarized(&'a mut BinarizedParam<T>),
    /// Non-trainable per-channel buffer (running statistics).
    Buffer(&'a mut Vec<T>),
}

pub struct NamedSlot<'a, T: Real = f32> {
    pub name: String,
    pub slot: Slot<'a, T>,
}

pub(crate) fn push<'a, T: Real>(out: &mut Vec<NamedSlot<'a, T>>, prefix: &str, name: &str, slot: Slot<'a, T>) {
    out.push(NamedSlot {
        name: format!("{prefix}.{name}"),
        slot,
    });
}

#[derive(Debug, Clone)]
pub enum ConvWeights<T: Real = f32> {
    Full(Param<T>),
    Binarized(BinarizedParam<T>),
}

#[derive(Debug, Clone)]
struct ConvCache<T: Real> {
    input: Tensor<T>,
    consumed: Option<Tensor<T>>,
    kernel: Tensor<T>,
}

/// Convolution whose kernel is either full precision or binarized, with
/// optional sign binarization of its input.
#[derive(Debug, Clone)]
pub struct ConvLayer<T: Real = f32> {
    pub weights: ConvWeights<T>,
    pub spec: ConvSpec,
    pub sign_input: bool,
    cache: Option<ConvCache<T>>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(weights: ConvWeights<T>, spec: ConvSpec, sign_input: bool) -> Self {
        Self {
            weights,
            spec,
            sign_input,
            cache: None,
        }
    }

    /// The kernel the forward pass convolves with (`X` or `X̂`).
    pub fn effective_kernel(&mut self) -> Result<Tensor<T>> {
        match &mut self.weights {
            ConvWeights::Full(p) => Ok(p.value.clone()),
            ConvWeights::Binarized(b) => b.kernel.binarize(),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let kernel = self.effective_kernel()?;
        let consumed = self.sign_input.then(|| binarize_activation(x));
        let y = conv2d(consumed.as_ref().unwrap_or(x), &kernel, self.spec)?;
        self.cache = Some(ConvCache {
            input: x.clone(),
            consumed,
            kernel,
        });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::BackwardBeforeForward("conv"))?;
        let consumed = cache.consumed.as_ref().unwrap_or(&cache.input);
        let (gx, gk) = conv2d_backward(consumed, &cache.kernel, grad_out, self.spec)?;
        match &mut self.weights {
            ConvWeights::Full(p) => p.accumulate(&gk),
            ConvWeights::Binarized(b) => {
                for (g, &v) in b.grad_xhat.data_mut().iter_mut().zip(gk.data()) {
                    *g = *g + v;
                }
            }
        }
        if self.sign_input {
            binarize_activation_backward(&cache.input, &gx)
        } else {
            Ok(gx)
        }
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a, T>>) {
        match &mut self.weights {
            ConvWeights::Full(p) => push(out, prefix, "weight", Slot::Dense(p)),
            ConvWeights::Binarized(b) => push(out, prefix, "weight", Slot::Binarized(b)),
        }
    }

    fn param_count(&self) -> usize {
        match &self.weights {
            ConvWeights::Full(p) => p.value.len(),
            ConvWeights::Binarized(b) => b.kernel.weights().len(),
        }
    }

    fn amplitude_loss(&self) -> f64 {
        match &self.weights {
            ConvWeights::Full(_) => 0.0,
            ConvWeights::Binarized(b) => b.kernel.amplitude_loss().as_f64(),
        }
    }
}

/// ReLU, or per-channel PReLU when a slope parameter is present.
#[derive(Debug, Clone)]
pub struct ActLayer<T: Real = f32> {
    pub slope: Option<Param<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> ActLayer<T> {
    pub fn relu() -> Self {
        Self {
            slope: None,
            cache: None,
        }
    }

    pub fn prelu(channels: usize, init: T) -> Self {
        Self {
            slope: Some(Param::vector(vec![init; channels], false)),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = match &self.slope {
            None => relu(x),
            Some(p) => prelu(x, p.value.data())?,
        };
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::BackwardBeforeForward("activation"))?;
        match &mut self.slope {
            None => relu_backward(&x, grad_out),
            Some(p) => {
                let (gx, gs) = prelu_backward(&x, p.value.data(), grad_out)?;
                p.accumulate_slice(&gs);
                Ok(gx)
            }
        }
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a, T>>) {
        if let Some(p) = &mut self.slope {
            push(out, prefix, "slope", Slot::Dense(p));
        }
    }

    fn param_count(&self) -> usize {
        self.slope.as_ref().map_or(0, |p| p.value.len())
    }
}

/// Affine batch normalization (always full precision, never decayed).
#[derive(Debug, Clone)]
pub struct NormLayer<T: Real = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running: RunningStats<T>,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Real> NormLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::vector(vec![T::one(); channels], false),
            beta: Param::vector(vec![T::zero(); channels], false),
            running: RunningStats::new(channels),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, cache) = batch_norm(
            x,
            self.gamma.value.data(),
            self.beta.value.data(),
            &mut self.running,
            mode,
        )?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::BackwardBeforeForward("batch_norm"))?;
        let (gx, gg, gb) = batch_norm_backward(&cache, self.gamma.value.data(), grad_out)?;
        self.gamma.accumulate_slice(&gg);
        self.beta.accumulate_slice(&gb);
        Ok(gx)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a, T>>) {
        push(out, prefix, "gamma", Slot::Dense(&mut self.gamma));
        push(out, prefix, "beta", Slot::Dense(&mut self.beta));
        push(out, prefix, "running_mean", Slot::Buffer(&mut self.running.mean));
        push(out, prefix, "running_var", Slot::Buffer(&mut self.running.var));
    }

    fn param_count(&self) -> usize {
        self.gamma.value.len() + self.beta.value.len()
    }
}

#[derive(Debug, Clone)]
pub struct PoolLayer<T: Real = f32> {
    pub spec: PoolSpec,
    cache: Option<Tensor<T>>,
}

impl<T: Real> PoolLayer<T> {
    pub fn new(spec: PoolSpec) -> Self {
        Self { spec, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = pool2d(x, self.spec)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::BackwardBeforeForward("pool"))?;
        pool2d_backward(&x, grad_out, self.spec)
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T: Real = f32> {
    Act(ActLayer<T>),
    Conv(ConvLayer<T>),
    Norm(NormLayer<T>),
    Pool(PoolLayer<T>),
}

impl<T: Real> Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Act(l) => l.forward(x),
            Layer::Conv(l) => l.forward(x),
            Layer::Norm(l) => l.forward(x, mode),
            Layer::Pool(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Act(l) => l.backward(grad_out),
            Layer::Conv(l) => l.backward(grad_out),
            Layer::Norm(l) => l.backward(grad_out),
            Layer::Pool(l) => l.backward(grad_out),
        }
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a, T>>) {
        match self {
            Layer::Act(l) => l.collect(prefix, out),
            Layer::Conv(l) => l.collect(prefix, out),
            Layer::Norm(l) => l.collect(prefix, out),
            Layer::Pool(_) => {}
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::Act(l) => l.param_count(),
            Layer::Conv(l) => l.param_count(),
            Layer::Norm(l) => l.param_count(),
            Layer::Pool(_) => 0,
        }
    }

    fn amplitude_loss(&self) -> f64 {
        match self {
            Layer::Conv(l) => l.amplitude_loss(),
            _ => 0.0,
        }
    }
}

/// Halves resolution with two stride-2 1×1 convolutions, the second on the
/// input shifted by one pixel, concatenated along channels and normalized.
#[derive(Debug, Clone)]
pub struct FactorizedReduce<T: Real = f32> {
    pub act: ActLayer<T>,
    pub conv_a: ConvLayer<T>,
    pub conv_b: ConvLayer<T>,
    pub norm: NormLayer<T>,
    split: usize,
}

impl<T: Real> FactorizedReduce<T> {
    pub fn new(act: ActLayer<T>, conv_a: ConvLayer<T>, conv_b: ConvLayer<T>, norm: NormLayer<T>) -> Self {
        let split = match &conv_a.weights {
            ConvWeights::Full(p) => p.value.shape()[0],
            ConvWeights::Binarized(b) => b.kernel.weights().shape()[0],
        };
        Self {
            act,
            conv_a,
            conv_b,
            norm,
            split,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let a = self.act.forward(x)?;
        let ya = self.conv_a.forward(&a)?;
        let yb = self.conv_b.forward(&shift_down_right(&a))?;
        let cat = concat_channels(&[&ya, &yb])?;
        self.norm.forward(&cat, mode)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.norm.backward(grad_out)?;
        let total = g.channels();
        let ga = slice_channels(&g, 0, self.split)?;
        let gb = slice_channels(&g, self.split, total - self.split)?;
        let mut gx = self.conv_a.backward(&ga)?;
        let gs = shift_down_right_backward(&self.conv_b.backward(&gb)?);
        crate::tensor::add_assign(&mut gx, &gs)?;
        self.act.backward(&gx)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a, T>>) {
        self.act.collect(&format!("{prefix}.act"), out);
        self.conv_a.collect(&format!("{prefix}.conv_a"), out);
        self.conv_b.collect(&format!("{prefix}.conv_b"), out);
        self.norm.collect(&format!("{prefix}.norm"), out);
    }

    fn param_count(&self) -> usize {
        self.act.param_count() + self.conv_a.param_count() + self.conv_b.param_count() + self.norm.param_count()
    }

    fn amplitude_loss(&self) -> f64 {
        self.conv_a.amplitude_loss() + self.conv_b.amplitude_loss()
    }
}

/// Computation graph of one operation or adapter.
#[derive(Debug, Clone)]
pub enum Block<T: Real = f32> {
    /// Outputs zeros at `1/stride` resolution.
    Zero {
        stride: usize,
        input_shape: Option<[usize; 4]>,
    },
    Identity {
        seen: bool,
    },
    Sequence(Vec<Layer<T>>),
    Reduce(FactorizedReduce<T>),
}

impl<T: Real> Block<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Block::Zero { stride, input_shape } => {
                let [n, c, h, w] = x.shape();
                *input_shape = Some(x.shape());
                Ok(Tensor::zeros([n, c, h.div_ceil(*stride), w.div_ceil(*stride)]))
            }
            Block::Identity { seen } => {
                *seen = true;
                Ok(x.clone())
            }
            Block::Sequence(layers) => {
                let mut y = x.clone();
                for layer in layers.iter_mut() {
                    y = layer.forward(&y, mode)?;
                }
                Ok(y)
            }
            Block::Reduce(r) => r.forward(x, mode),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Block::Zero { input_shape, .. } => {
                let shape = input_shape.take().ok_or(Error::BackwardBeforeForward("none"))?;
                Ok(Tensor::zeros(shape))
            }
            Block::Identity { seen } => {
                if !std::mem::replace(seen, false) {
                    return Err(Error::BackwardBeforeForward("skip_connect"));
                }
                Ok(grad_out.clone())
            }
            Block::Sequence(layers) => {
                let mut g = grad_out.clone();
                for layer in layers.iter_mut().rev() {
                    g = layer.backward(&g)?;
                }
                Ok(g)
            }
            Block::Reduce(r) => r.backward(grad_out),
        }
    }

    pub fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a, T>>) {
        match self {
            Block::Sequence(layers) => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    layer.collect(&format!("{prefix}.{i}"), out);
                }
            }
            Block::Reduce(r) => r.collect(prefix, out),
            _ => {}
        }
    }

    /// Trainable scalars: dense tensors plus binarized `X` (the auxiliary `A` is not counted).
    pub fn param_count(&self) -> usize {
        match self {
            Block::Sequence(layers) => layers.iter().map(Layer::param_count).sum(),
            Block::Reduce(r) => r.param_count(),
            _ => 0,
        }
    }

    /// `L_Â` summed over binarized kernels of this block.
    pub fn amplitude_loss(&self) -> f64 {
        match self {
            Block::Sequence(layers) => layers.iter().map(Layer::amplitude_loss).sum(),
            Block::Reduce(r) => r.amplitude_loss(),
            _ => 0.0,
        }
    }
}
