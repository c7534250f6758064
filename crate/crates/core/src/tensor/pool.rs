use rayon::prelude::*;

use super::{check_finite, Real, Tensor};
use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Square pooling window. Padded cells never contribute: max ignores them
/// and average divides by the number of in-bounds cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    /// The 3×3, padding-1 pooling used by the candidate operations.
    pub fn op(kind: PoolKind, stride: usize) -> Self {
        Self {
            kind,
            window: 3,
            stride,
            padding: 1,
        }
    }

    fn output_size(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.padding;
        if padded < self.window || self.stride == 0 || size == 0 {
            return None;
        }
        Some((padded - self.window) / self.stride + 1)
    }

    fn validate(&self, shape: [usize; 4]) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(invalid!("pool2d: window and stride must be positive"));
        }
        if self.padding >= self.window {
            return Err(invalid!("pool2d: padding must be smaller than the window"));
        }
        match (self.output_size(shape[2]), self.output_size(shape[3])) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(shape_err!("pool2d: input {:?} too small", shape)),
        }
    }

    /// In-bounds input rows (or columns) covered by output index `o`.
    fn span(&self, o: usize, size: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.padding as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.window as isize) as usize).min(size);
        (lo, hi)
    }
}

/// For every output cell, the flat in-plane index of the maximum; ties go to
/// the lowest index.
fn argmax_plane<T: Real>(plane: &[T], h: usize, w: usize, spec: &PoolSpec, oh: usize, ow: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1) = spec.span(oy, h);
        for ox in 0..ow {
            let (x0, x1) = spec.span(ox, w);
            let mut best = y0 * w + x0;
            for y in y0..y1 {
                for x in x0..x1 {
                    if plane[y * w + x] > plane[best] {
                        best = y * w + x;
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

pub fn pool2d<T: Real>(input: &Tensor<T>, spec: PoolSpec) -> Result<Tensor<T>> {
    let shape = input.shape();
    let (oh, ow) = spec.validate(shape)?;
    let [n, c, h, w] = shape;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    if out.is_empty() {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(input.data().par_chunks(h * w))
        .for_each(|(o, plane)| match spec.kind {
            PoolKind::Max => {
                for (dst, idx) in o.iter_mut().zip(argmax_plane(plane, h, w, &spec, oh, ow)) {
                    *dst = plane[idx];
                }
            }
            PoolKind::Avg => {
                for oy in 0..oh {
                    let (y0, y1) = spec.span(oy, h);
                    for ox in 0..ow {
                        let (x0, x1) = spec.span(ox, w);
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            for x in x0..x1 {
                                acc = acc + plane[y * w + x];
                            }
                        }
                        let count = ((y1 - y0) * (x1 - x0)) as f64;
                        o[oy * ow + ox] = acc / T::of(count);
                    }
                }
            }
        });
    check_finite(out, "pool2d")
}

/// Routes `grad_out` to the arg-max cell (max) or spreads it evenly over the
/// in-bounds window (avg).
pub fn pool2d_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>, spec: PoolSpec) -> Result<Tensor<T>> {
    let shape = input.shape();
    let (oh, ow) = spec.validate(shape)?;
    let [n, c, h, w] = shape;
    grad_out.expect_shape([n, c, oh, ow], "pool2d_backward grad_out")?;
    let mut grad_in = Tensor::zeros(shape);
    if grad_in.is_empty() {
        return Ok(grad_in);
    }
    grad_in
        .data_mut()
        .par_chunks_mut(h * w)
        .zip(input.data().par_chunks(h * w))
        .zip(grad_out.data().par_chunks(oh * ow))
        .for_each(|((gi, plane), go)| match spec.kind {
            PoolKind::Max => {
                for (g, idx) in go.iter().zip(argmax_plane(plane, h, w, &spec, oh, ow)) {
                    gi[idx] = gi[idx] + *g;
                }
            }
            PoolKind::Avg => {
                for oy in 0..oh {
                    let (y0, y1) = spec.span(oy, h);
                    for ox in 0..ow {
                        let (x0, x1) = spec.span(ox, w);
                        let share = go[oy * ow + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                        for y in y0..y1 {
                            for x in x0..x1 {
                                gi[y * w + x] = gi[y * w + x] + share;
                            }
                        }
                    }
                }
            }
        });
    check_finite(grad_in, "pool2d_backward")
}
