use super::{check_finite, Mode, Real, Tensor};
use crate::error::{shape_err, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running per-channel statistics updated in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Real = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Values saved by [`batch_norm`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Real = f32> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Real> BatchNormCache<T> {
    /// The pre-affine normalized input.
    pub fn normalized(&self) -> &Tensor<T> {
        &self.normalized
    }
}

fn check_params<T: Real>(input: &Tensor<T>, gamma: &[T], beta: &[T], running: &RunningStats<T>) -> Result<()> {
    let c = input.channels();
    if gamma.len() != c || beta.len() != c || running.mean.len() != c || running.var.len() != c {
        return Err(shape_err!(
            "batch_norm: parameters of length {}/{}/{} for {c} channels",
            gamma.len(),
            beta.len(),
            running.mean.len()
        ));
    }
    Ok(())
}

/// Per-channel normalization. Train mode uses batch statistics (biased
/// variance) and folds them into `running` with momentum 0.1 (unbiased
/// variance); eval mode uses `running`.
pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: &mut RunningStats<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    check_params(input, gamma, beta, running)?;
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let count = n * plane;
    let eps = T::of(BN_EPS);
    let momentum = T::of(BN_MOMENTUM);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        Mode::Train => {
            if count == 0 {
                return Err(shape_err!("batch_norm: empty batch in train mode"));
            }
            let inv = T::of(1.0 / count as f64);
            for ch in 0..c {
                let mut s = T::zero();
                for e in 0..n {
                    let base = (e * c + ch) * plane;
                    s = s + input.data()[base..base + plane].iter().copied().sum::<T>();
                }
                let m = s * inv;
                let mut sq = T::zero();
                for e in 0..n {
                    let base = (e * c + ch) * plane;
                    sq = sq + input.data()[base..base + plane].iter().map(|&x| (x - m) * (x - m)).sum::<T>();
                }
                mean[ch] = m;
                var[ch] = sq * inv;
                let unbiased = if count > 1 {
                    sq / T::of((count - 1) as f64)
                } else {
                    var[ch]
                };
                running.mean[ch] = (T::one() - momentum) * running.mean[ch] + momentum * m;
                running.var[ch] = (T::one() - momentum) * running.var[ch] + momentum * unbiased;
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(&running.mean);
            var.copy_from_slice(&running.var);
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    for e in 0..n {
        for ch in 0..c {
            let base = (e * c + ch) * plane;
            for i in base..base + plane {
                let xh = (input.data()[i] - mean[ch]) * inv_std[ch];
                normalized.data_mut()[i] = xh;
                out.data_mut()[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok((
        check_finite(out, "batch_norm")?,
        BatchNormCache {
            normalized,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    grad_out.expect_shape(cache.normalized.shape(), "batch_norm_backward")?;
    let [n, c, h, w] = grad_out.shape();
    if gamma.len() != c {
        return Err(shape_err!("batch_norm_backward: {} gammas for {c} channels", gamma.len()));
    }
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];
    for e in 0..n {
        for ch in 0..c {
            let base = (e * c + ch) * plane;
            for i in base..base + plane {
                let g = grad_out.data()[i];
                grad_beta[ch] = grad_beta[ch] + g;
                grad_gamma[ch] = grad_gamma[ch] + g * cache.normalized.data()[i];
            }
        }
    }
    let mut grad_in = Tensor::zeros(grad_out.shape());
    for e in 0..n {
        for ch in 0..c {
            let base = (e * c + ch) * plane;
            let scale = gamma[ch] * cache.inv_std[ch];
            for i in base..base + plane {
                let g = grad_out.data()[i];
                grad_in.data_mut()[i] = match cache.mode {
                    Mode::Train => {
                        scale / count
                            * (count * g - grad_beta[ch] - cache.normalized.data()[i] * grad_gamma[ch])
                    }
                    Mode::Eval => scale * g,
                };
            }
        }
    }
    Ok((check_finite(grad_in, "batch_norm_backward")?, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;

    #[test]
    fn train_mode_normalizes() {
        let x = random([4, 3, 5, 5], 1).map(|v| 3.0 * v + 2.0);
        let mut rs = RunningStats::new(3);
        let (_, cache) = batch_norm(&x, &[1.0; 3], &[0.0; 3], &mut rs, Mode::Train).unwrap();
        let xh = cache.normalized();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|e| (0..25).map(move |i| (e, i)))
                .map(|(e, i)| xh.data()[(e * 3 + ch) * 25 + i])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-4);
        }
        assert!(rs.mean.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn zero_variance_channel_maps_to_zero() {
        let x = Tensor::<f32>::full([2, 1, 3, 3], 4.0);
        let mut rs = RunningStats::new(1);
        let (y, _) = batch_norm(&x, &[1.0], &[0.0], &mut rs, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::<f64>::full([1, 1, 2, 2], 3.0);
        let mut rs = RunningStats { mean: vec![1.0], var: vec![4.0 - BN_EPS] };
        let (y, _) = batch_norm(&x, &[2.0], &[0.5], &mut rs, Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert_eq!(rs.mean, vec![1.0]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::<f32>::zeros([1, 2, 2, 2]);
        let mut rs = RunningStats::new(2);
        assert!(batch_norm(&x, &[1.0], &[0.0, 0.0], &mut rs, Mode::Train).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = random([2, 3, 4, 4], 7);
        let gamma = vec![1.3, 0.7, -0.4];
        let beta = vec![0.1, -0.2, 0.3];
        let g = random(x.shape(), 8);
        let run = |x: &Tensor<f64>, gamma: &[f64], beta: &[f64]| {
            let mut rs = RunningStats::new(3);
            batch_norm(x, gamma, beta, &mut rs, Mode::Train).unwrap()
        };
        let (_, cache) = run(&x, &gamma, &beta);
        let (gi, gg, gb) = batch_norm_backward(&cache, &gamma, &g).unwrap();
        let num_x = numeric_grad(&x, 1e-5, |p| run(p, &gamma, &beta).0.dot(&g).unwrap());
        assert_grad_close(gi.data(), &num_x, 1e-3);
        let gt = Tensor::from_slice([3, 1, 1, 1], &gamma).unwrap();
        let num_g = numeric_grad(&gt, 1e-5, |p| run(&x, p.data(), &beta).0.dot(&g).unwrap());
        assert_grad_close(&gg, &num_g, 1e-3);
        let bt = Tensor::from_slice([3, 1, 1, 1], &beta).unwrap();
        let num_b = numeric_grad(&bt, 1e-5, |p| run(&x, &gamma, p.data()).0.dot(&g).unwrap());
        assert_grad_close(&gb, &num_b, 1e-3);
    }

    #[test]
    fn eval_backward_is_affine() {
        let x = random([2, 2, 3, 3], 9);
        let mut rs = RunningStats { mean: vec![0.2, -0.1], var: vec![0.5, 2.0] };
        let gamma = vec![1.5, -0.5];
        let g = random(x.shape(), 10);
        let (_, cache) = batch_norm(&x, &gamma, &[0.0, 0.0], &mut rs, Mode::Eval).unwrap();
        let (gi, _, _) = batch_norm_backward(&cache, &gamma, &g).unwrap();
        let num = numeric_grad(&x, 1e-6, |p| {
            let mut r = rs.clone();
            batch_norm(p, &gamma, &[0.0, 0.0], &mut r, Mode::Eval).unwrap().0.dot(&g).unwrap()
        });
        assert_grad_close(gi.data(), &num, 1e-6);
    }
}
