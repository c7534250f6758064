use super::{check_finite, Real, Tensor};
use crate::error::{shape_err, Result};

/// Mean over each (example, channel) plane; output shape `(N, C, 1, 1)`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = input.shape();
    let plane = input.plane_len().max(1);
    let scale = T::of(1.0 / plane as f64);
    let data = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * scale)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data).expect("one value per plane")
}

pub fn global_avg_pool_backward<T: Real>(input_shape: [usize; 4], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    grad_out.expect_shape([n, c, 1, 1], "global_avg_pool_backward")?;
    let plane = h * w;
    let scale = T::of(1.0 / plane.max(1) as f64);
    let mut data = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat(g * scale).take(plane));
    }
    Tensor::from_vec(input_shape, data)
}

fn check_linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<(usize, usize, usize)> {
    let n = input.batch();
    let fin = input.example_len();
    let [out, win, kh, kw] = weight.shape();
    if win != fin || kh != 1 || kw != 1 || bias.len() != out {
        return Err(shape_err!(
            "linear: input features {fin}, weight {:?}, bias {}",
            weight.shape(),
            bias.len()
        ));
    }
    Ok((n, fin, out))
}

/// Fully connected layer over flattened examples; weight shape `(out, in, 1, 1)`.
pub fn linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (n, fin, out) = check_linear(input, weight, bias)?;
    let mut y = Tensor::zeros([n, out, 1, 1]);
    for e in 0..n {
        let x = &input.data()[e * fin..(e + 1) * fin];
        for o in 0..out {
            let wrow = &weight.data()[o * fin..(o + 1) * fin];
            let dot: T = x.iter().zip(wrow).map(|(&a, &b)| a * b).sum();
            y.data_mut()[e * out + o] = dot + bias[o];
        }
    }
    check_finite(y, "linear")
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let (n, fin, out) = check_linear(input, weight, bias)?;
    grad_out.expect_shape([n, out, 1, 1], "linear_backward grad_out")?;
    let mut gi = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = vec![T::zero(); out];
    for e in 0..n {
        let x = &input.data()[e * fin..(e + 1) * fin];
        for o in 0..out {
            let g = grad_out.data()[e * out + o];
            gb[o] = gb[o] + g;
            let wrow = &weight.data()[o * fin..(o + 1) * fin];
            let gwrow = &mut gw.data_mut()[o * fin..(o + 1) * fin];
            for i in 0..fin {
                gwrow[i] = gwrow[i] + g * x[i];
            }
            let girow = &mut gi.data_mut()[e * fin..(e + 1) * fin];
            for i in 0..fin {
                girow[i] = girow[i] + g * wrow[i];
            }
        }
    }
    Ok((check_finite(gi, "linear_backward")?, check_finite(gw, "linear_backward")?, gb))
}
