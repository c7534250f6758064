use crate::error::{invalid, shape_err, Error, Result};
use crate::ops::{NamedSlot, OpInstance};
use crate::tensor::{
    add_assign, channel_shuffle, channel_unshuffle, concat_channels, pool2d, pool2d_backward, slice_channels,
    Mode, PoolKind, PoolSpec, Tensor,
};

/// How an edge combines its candidates on one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum EdgeRoute<'a> {
    /// Weighted sum with the given (already softmaxed) mixture weights.
    Mixture(&'a [f32]),
    /// Only candidate `i`, with weight 1.
    Single(usize),
}

#[derive(Debug, Clone)]
struct EdgeCache {
    input_shape: [usize; 4],
    bypass_input: Option<Tensor>,
    /// Candidate index and its output (outputs are kept for the α gradient).
    outputs: Vec<(usize, Tensor)>,
    weights: Vec<f32>,
}

/// A partially-connected mixed edge: the first `channels / divisor` channels
/// go through the weighted candidate mixture, the rest bypass it, and the two
/// parts are recombined with a channel shuffle.
#[derive(Debug, Clone)]
pub struct MixedEdge {
    pub ops: Vec<OpInstance>,
    pub channel_divisor: usize,
    pub channels: usize,
    pub stride: usize,
    /// `true` for channels routed through the candidates.
    pub mask: Vec<bool>,
    cache: Option<EdgeCache>,
}

impl MixedEdge {
    pub fn new(ops: Vec<OpInstance>, channels: usize, stride: usize, channel_divisor: usize) -> Result<Self> {
        if channel_divisor == 0 || channels % channel_divisor != 0 {
            return Err(invalid!(
                "channel divisor {channel_divisor} must divide {channels} channels"
            ));
        }
        let selected = channels / channel_divisor;
        if let Some(op) = ops.iter().find(|op| op.channels != selected || op.stride != stride) {
            return Err(invalid!(
                "{} built for {} channels / stride {}, edge needs {selected} / {stride}",
                op.kind,
                op.channels,
                op.stride
            ));
        }
        Ok(Self {
            ops,
            channel_divisor,
            channels,
            stride,
            mask: (0..channels).map(|c| c < selected).collect(),
            cache: None,
        })
    }

    pub fn selected_channels(&self) -> usize {
        self.channels / self.channel_divisor
    }

    fn bypass_spec(&self) -> PoolSpec {
        PoolSpec::op(PoolKind::Avg, self.stride)
    }

    pub fn forward(&mut self, input: &Tensor, route: EdgeRoute<'_>, mode: Mode) -> Result<Tensor> {
        if input.channels() != self.channels {
            return Err(shape_err!(
                "edge expects {} channels, got {}",
                self.channels,
                input.channels()
            ));
        }
        let k = self.selected_channels();
        let partial = self.channel_divisor > 1;
        let selected = if partial {
            slice_channels(input, 0, k)?
        } else {
            input.clone()
        };
        let (weights, active): (Vec<f32>, Vec<usize>) = match route {
            EdgeRoute::Mixture(w) => {
                if w.len() != self.ops.len() {
                    return Err(shape_err!("{} mixture weights for {} ops", w.len(), self.ops.len()));
                }
                (w.to_vec(), (0..self.ops.len()).collect())
            }
            EdgeRoute::Single(i) => {
                if i >= self.ops.len() {
                    return Err(invalid!("candidate {i} does not exist ({} left)", self.ops.len()));
                }
                (vec![1.0], vec![i])
            }
        };
        let mut mix: Option<Tensor> = None;
        let mut outputs = Vec::with_capacity(active.len());
        for (&i, &w) in active.iter().zip(&weights) {
            let out = self.ops[i].forward(&selected, mode)?;
            let term = out.scale(w);
            match &mut mix {
                None => mix = Some(term),
                Some(acc) => add_assign(acc, &term)?,
            }
            outputs.push((i, out));
        }
        let mix = mix.ok_or_else(|| invalid!("edge has no candidates"))?;
        let (result, bypass_input) = if partial {
            let rest = slice_channels(input, k, self.channels - k)?;
            let bypass = if self.stride == 1 {
                rest.clone()
            } else {
                pool2d(&rest, self.bypass_spec())?
            };
            let joined = concat_channels(&[&mix, &bypass])?;
            (channel_shuffle(&joined, self.channel_divisor)?, (self.stride != 1).then_some(rest))
        } else {
            (mix, None)
        };
        self.cache = Some(EdgeCache {
            input_shape: input.shape(),
            bypass_input,
            outputs,
            weights,
        });
        Ok(result)
    }

    /// Returns the input gradient and, for mixture routes, `∂L/∂w_k` for every candidate.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<(Tensor, Option<Vec<f32>>)> {
        let cache = self.cache.take().ok_or(Error::BackwardBeforeForward("mixed edge"))?;
        let k = self.selected_channels();
        let partial = self.channel_divisor > 1;
        let (g_mix, g_bypass) = if partial {
            let g = channel_unshuffle(grad_out, self.channel_divisor)?;
            (
                slice_channels(&g, 0, k)?,
                Some(slice_channels(&g, k, self.channels - k)?),
            )
        } else {
            (grad_out.clone(), None)
        };
        let mixture = cache.outputs.len() == self.ops.len() && cache.weights.len() == self.ops.len();
        let mut weight_grads = vec![0.0f32; self.ops.len()];
        let mut g_sel: Option<Tensor> = None;
        for ((i, out), &w) in cache.outputs.iter().zip(&cache.weights) {
            weight_grads[*i] = g_mix.dot(out)?;
            let gi = self.ops[*i].backward(&g_mix.scale(w))?;
            match &mut g_sel {
                None => g_sel = Some(gi),
                Some(acc) => add_assign(acc, &gi)?,
            }
        }
        let g_sel = g_sel.ok_or_else(|| invalid!("edge has no candidates"))?;
        let grad_in = match g_bypass {
            None => g_sel,
            Some(gb) => {
                let gb = match &cache.bypass_input {
                    None => gb,
                    Some(rest) => pool2d_backward(rest, &gb, self.bypass_spec())?,
                };
                concat_channels(&[&g_sel, &gb])?
            }
        };
        grad_in.expect_shape(cache.input_shape, "mixed edge input gradient")?;
        Ok((grad_in, mixture.then_some(weight_grads)))
    }

    /// Removes candidate `index` together with its parameters.
    pub fn remove(&mut self, index: usize) -> Result<OpInstance> {
        if self.ops.len() < 2 {
            return Err(invalid!("cannot prune the last operation on an edge"));
        }
        if index >= self.ops.len() {
            return Err(invalid!("candidate {index} does not exist"));
        }
        self.cache = None;
        Ok(self.ops.remove(index))
    }

    pub fn collect_state<'a>(&'a mut self, prefix: &str, only: Option<usize>, out: &mut Vec<NamedSlot<'a, f32>>) {
        for (i, op) in self.ops.iter_mut().enumerate() {
            if only.is_none_or(|o| o == i) {
                let name = format!("{prefix}.{}", op.kind);
                op.collect_state(&name, out);
            }
        }
    }
}
