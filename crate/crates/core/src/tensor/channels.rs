//! Channel slicing, concatenation and shuffling plus the one-pixel shift used
//! by factorized reduction.

use super::{Real, Tensor};
use crate::error::{invalid, shape_err, Result};

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    add_assign(&mut out, b)?;
    Ok(out)
}

pub fn add_assign<T: Real>(acc: &mut Tensor<T>, b: &Tensor<T>) -> Result<()> {
    b.expect_shape(acc.shape(), "add")?;
    for (x, &y) in acc.data_mut().iter_mut().zip(b.data()) {
        *x = *x + y;
    }
    Ok(())
}

/// Channels `start..start + count` of every example.
pub fn slice_channels<T: Real>(input: &Tensor<T>, start: usize, count: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if start + count > c {
        return Err(shape_err!("slice_channels: {start}+{count} exceeds {c} channels"));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * count * plane);
    for e in 0..n {
        let base = (e * c + start) * plane;
        data.extend_from_slice(&input.data()[base..base + count * plane]);
    }
    Tensor::from_vec([n, count, h, w], data)
}

pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| invalid!("concat_channels: no inputs"))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err!(
                "concat_channels: {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            ));
        }
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for e in 0..n {
        for p in parts {
            let len = p.example_len();
            data.extend_from_slice(&p.data()[e * len..(e + 1) * len]);
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

fn permute_channels<T: Real>(input: &Tensor<T>, source_of: impl Fn(usize) -> usize) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let mut data = Vec::with_capacity(input.len());
    for e in 0..n {
        for dst in 0..c {
            let src = (e * c + source_of(dst)) * plane;
            data.extend_from_slice(&input.data()[src..src + plane]);
        }
    }
    Tensor::from_vec([n, c, h, w], data).expect("permutation preserves size")
}

fn check_groups(c: usize, groups: usize) -> Result<usize> {
    if groups == 0 || c % groups != 0 {
        return Err(shape_err!("channel_shuffle: {groups} groups do not divide {c} channels"));
    }
    Ok(c / groups)
}

/// Views channels as `(groups, c / groups)` and transposes, so output channel
/// `j * groups + g` comes from input channel `g * (c / groups) + j`.
pub fn channel_shuffle<T: Real>(input: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let per = check_groups(input.channels(), groups)?;
    Ok(permute_channels(input, |dst| (dst % groups) * per + dst / groups))
}

/// Inverse of [`channel_shuffle`].
pub fn channel_unshuffle<T: Real>(input: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let per = check_groups(input.channels(), groups)?;
    Ok(permute_channels(input, |dst| (dst % per) * groups + dst / per))
}

/// `out[y][x] = in[y + 1][x + 1]`, zero past the bottom/right edge.
pub fn shift_down_right<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..h.saturating_sub(1) {
            for x in 0..w.saturating_sub(1) {
                out.data_mut()[base + y * w + x] = input.data()[base + (y + 1) * w + x + 1];
            }
        }
    }
    out
}

pub fn shift_down_right_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = grad_out.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..h.saturating_sub(1) {
            for x in 0..w.saturating_sub(1) {
                out.data_mut()[base + (y + 1) * w + x + 1] = grad_out.data()[base + y * w + x];
            }
        }
    }
    out
}
