use super::{check_finite, Real, Tensor};
use crate::error::{shape_err, Result};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(input.shape(), "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

fn check_slope<T: Real>(input: &Tensor<T>, slope: &[T]) -> Result<()> {
    if slope.len() != input.channels() {
        return Err(shape_err!(
            "prelu: {} slopes for {} channels",
            slope.len(),
            input.channels()
        ));
    }
    Ok(())
}

/// Per-channel parametric ReLU: `x` for `x > 0`, otherwise `slope[c] * x`.
pub fn prelu<T: Real>(input: &Tensor<T>, slope: &[T]) -> Result<Tensor<T>> {
    check_slope(input, slope)?;
    let plane = input.plane_len();
    let c = input.channels();
    let mut out = input.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane.max(1)).enumerate() {
        let a = slope[i % c];
        for x in chunk.iter_mut() {
            if *x <= T::zero() {
                *x = a * *x;
            }
        }
    }
    check_finite(out, "prelu")
}

/// Returns `(grad_input, grad_slope)`.
pub fn prelu_backward<T: Real>(
    input: &Tensor<T>,
    slope: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    check_slope(input, slope)?;
    grad_out.expect_shape(input.shape(), "prelu_backward")?;
    let plane = input.plane_len().max(1);
    let c = input.channels();
    let mut grad_in = grad_out.clone();
    let mut grad_slope = vec![T::zero(); c];
    for (i, (gi, x)) in grad_in
        .data_mut()
        .chunks_mut(plane)
        .zip(input.data().chunks(plane))
        .enumerate()
    {
        let ch = i % c;
        let a = slope[ch];
        for (g, &xv) in gi.iter_mut().zip(x) {
            if xv <= T::zero() {
                grad_slope[ch] = grad_slope[ch] + *g * xv;
                *g = *g * a;
            }
        }
    }
    Ok((check_finite(grad_in, "prelu_backward")?, grad_slope))
}
