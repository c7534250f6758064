//! Amplitude/direction binarization of convolution kernels, the amplitude
//! reconstruction loss, and the straight-through update rules for the
//! full-precision kernel `X` and the amplitude matrix `A`.
//!
//! A kernel of shape `(Cout, Cin, k, k)` is binarized as `X̂ = Â · sign(X)`,
//! where `Â` is a single per-layer scalar equal to the mean of `A`. `A` has
//! the shape of one output slice `(Cin, k, k)` and is shared by every output
//! channel. In XNOR mode `Â` is the closed-form `mean |X|`; in PCNN mode `A` is
//! learned and kept non-negative by `A ← |A - η₂ δ_A|`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// `sign` with `sign(0) = +1`.
#[inline]
pub fn sign<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

/// Straight-through window: gradients pass where `|x| <= 1`.
#[inline]
pub fn ste_window<T: Real>(x: T) -> bool {
    x.abs() <= T::one()
}

/// Mean accumulated in `f64`; exact for any number of equal `f32` values.
fn mean_of<T: Real>(values: impl Iterator<Item = T>) -> T {
    let (sum, count) = values.fold((0.0f64, 0usize), |(s, c), v| (s + v.as_f64(), c + 1));
    if count == 0 {
        T::zero()
    } else {
        T::of(sum / count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeMode {
    /// `Â = mean |X|`, recomputed on every forward.
    #[default]
    Xnor,
    /// `Â = mean A`, with `A` learned.
    Pcnn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedKernel<T: Real = f32> {
    weights: Tensor<T>,
    amplitude: Vec<T>,
    a_hat: T,
    mode: BinarizeMode,
    /// Weight of the amplitude reconstruction loss.
    pub theta: T,
    /// Learning rate for `X`.
    pub eta1: T,
    /// Learning rate for `A`.
    pub eta2: T,
}

impl<T: Real> BinarizedKernel<T> {
    /// Wraps a full-precision kernel; `A` starts as `mean |X|` everywhere.
    pub fn new(weights: Tensor<T>, mode: BinarizeMode, theta: T) -> Result<Self> {
        if !weights.is_finite() {
            return Err(Error::NonFinite("binarized kernel weights".into()));
        }
        if weights.is_empty() {
            return Err(shape_err!("binarized kernel must be non-empty"));
        }
        if theta < T::zero() {
            return Err(invalid!("theta must be non-negative"));
        }
        let slice = weights.example_len();
        let a_hat = mean_of(weights.data().iter().map(|x| x.abs()));
        Ok(Self {
            weights,
            amplitude: vec![a_hat; slice],
            a_hat,
            mode,
            theta,
            eta1: T::of(0.01),
            eta2: T::of(0.01),
        })
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn amplitude(&self) -> &[T] {
        &self.amplitude
    }

    pub fn a_hat(&self) -> T {
        self.a_hat
    }

    pub fn mode(&self) -> BinarizeMode {
        self.mode
    }

    /// Shape of `A`: one output slice of the kernel.
    pub fn amplitude_shape(&self) -> [usize; 4] {
        let [_, c, h, w] = self.weights.shape();
        [1, c, h, w]
    }

    /// Replaces `A` (PCNN) and refreshes `Â`.
    pub fn set_amplitude(&mut self, amplitude: Vec<T>) -> Result<()> {
        if amplitude.len() != self.amplitude.len() {
            return Err(shape_err!(
                "amplitude of length {} for slice of {}",
                amplitude.len(),
                self.amplitude.len()
            ));
        }
        if amplitude.iter().any(|&a| a < T::zero() || !a.is_finite()) {
            return Err(invalid!("amplitudes must be finite and non-negative"));
        }
        self.amplitude = amplitude;
        self.refresh();
        Ok(())
    }

    /// Replaces `X` keeping the shape, then refreshes `Â`.
    pub fn set_weights(&mut self, weights: Tensor<T>) -> Result<()> {
        weights.expect_shape(self.weights.shape(), "binarized kernel weights")?;
        if !weights.is_finite() {
            return Err(Error::NonFinite("binarized kernel weights".into()));
        }
        self.weights = weights;
        self.refresh();
        Ok(())
    }

    /// Recomputes `Â` from `X` (XNOR, also resetting `A` to it) or from `A` (PCNN).
    pub fn refresh(&mut self) {
        match self.mode {
            BinarizeMode::Xnor => {
                self.a_hat = mean_of(self.weights.data().iter().map(|x| x.abs()));
                let a = self.a_hat;
                self.amplitude.iter_mut().for_each(|v| *v = a);
            }
            BinarizeMode::Pcnn => self.a_hat = mean_of(self.amplitude.iter().copied()),
        }
    }

    /// `D = sign(X)`.
    pub fn direction(&self) -> Tensor<T> {
        self.weights.map(sign)
    }

    /// `X̂ = Â ⊙ D` with the current `Â`.
    pub fn binarized(&self) -> Tensor<T> {
        let a = self.a_hat;
        self.weights.map(|x| a * sign(x))
    }

    /// Refreshes `Â` and returns `X̂`; `X` is left untouched.
    pub fn binarize(&mut self) -> Result<Tensor<T>> {
        if !self.weights.is_finite() {
            return Err(Error::NonFinite("binarize".into()));
        }
        self.refresh();
        Ok(self.binarized())
    }

    /// `(θ/2) Σ_i ‖X_i - Â ⊙ D_i‖²`.
    pub fn amplitude_loss(&self) -> T {
        if self.theta == T::zero() {
            return T::zero();
        }
        let a = self.a_hat;
        let sq: T = self
            .weights
            .data()
            .iter()
            .map(|&x| {
                let r = x - a * sign(x);
                r * r
            })
            .sum();
        self.theta * T::of(0.5) * sq
    }

    fn check_grad(&self, grad: &Tensor<T>) -> Result<()> {
        grad.expect_shape(self.weights.shape(), "gradient w.r.t. binarized kernel")
    }

    /// `δ_X = ∂L_S/∂X̂ · Â · 𝟙(|X| ≤ 1) + θ (X - Â ⊙ D)`.
    pub fn grad_kernel(&self, grad_wrt_xhat: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_grad(grad_wrt_xhat)?;
        let a = self.a_hat;
        let theta = self.theta;
        let data = self
            .weights
            .data()
            .iter()
            .zip(grad_wrt_xhat.data())
            .map(|(&x, &g)| {
                let data_term = if ste_window(x) { g * a } else { T::zero() };
                data_term + theta * (x - a * sign(x))
            })
            .collect();
        Tensor::from_vec(self.weights.shape(), data)
    }

    /// `δ_A = Σ_i ∂L_S/∂X̂_i ⊙ D_i - θ Σ_i (X_i - Â ⊙ D_i) ⊙ D_i`, summed over
    /// output channels `i` onto the shape of `A` (with `∂Â/∂A := 1`).
    pub fn grad_amplitude(&self, grad_wrt_xhat: &Tensor<T>) -> Result<Vec<T>> {
        self.check_grad(grad_wrt_xhat)?;
        let slice = self.amplitude.len();
        let a = self.a_hat;
        let theta = self.theta;
        let mut delta = vec![T::zero(); slice];
        for (xs, gs) in self
            .weights
            .data()
            .chunks(slice)
            .zip(grad_wrt_xhat.data().chunks(slice))
        {
            for ((d, &x), &g) in delta.iter_mut().zip(xs).zip(gs) {
                let dir = sign(x);
                *d = *d + g * dir - theta * (x - a * dir) * dir;
            }
        }
        Ok(delta)
    }

    /// `X ← X - η₁ δ_X`; PCNN: `A ← |A - η₂ δ_A|`; XNOR: `Â ← mean |X|`.
    pub fn update_params(&mut self, delta_x: &Tensor<T>, delta_a: &[T]) -> Result<()> {
        self.check_grad(delta_x)?;
        if delta_a.len() != self.amplitude.len() {
            return Err(shape_err!(
                "delta_A of length {} for amplitude of {}",
                delta_a.len(),
                self.amplitude.len()
            ));
        }
        let eta1 = self.eta1;
        for (x, &d) in self.weights.data_mut().iter_mut().zip(delta_x.data()) {
            *x = *x - eta1 * d;
        }
        if self.mode == BinarizeMode::Pcnn {
            let eta2 = self.eta2;
            for (a, &d) in self.amplitude.iter_mut().zip(delta_a) {
                *a = (*a - eta2 * d).abs();
            }
        }
        self.refresh();
        if !self.weights.is_finite() || !self.a_hat.is_finite() {
            return Err(Error::NonFinite("binarized kernel update".into()));
        }
        Ok(())
    }
}

/// Forward sign of activations (`sign(0) = +1`).
pub fn binarize_activation<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sign)
}

/// Straight-through backward of [`binarize_activation`].
pub fn binarize_activation_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(input.shape(), "binarize_activation_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if ste_window(x) { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Which data term drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(1/2S) Σ_s ‖Ŷ_s - Y_s‖²` against one-hot targets.
    #[default]
    SquaredError,
    CrossEntropy,
}

/// Breakdown of the overall loss `L = L_S + L_Â`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub classification: f64,
    pub amplitude: f64,
    pub total: f64,
    pub examples: usize,
}

impl LossTerms {
    pub fn new(classification: f64, amplitude: f64, examples: usize) -> Self {
        Self {
            classification,
            amplitude,
            total: classification + amplitude,
            examples,
        }
    }
}

fn check_outputs<T: Real>(outputs: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let s = outputs.batch();
    let k = outputs.example_len();
    if labels.len() != s {
        return Err(shape_err!("{} labels for {s} outputs", labels.len()));
    }
    if s == 0 {
        return Err(shape_err!("classification loss over an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(shape_err!("label {bad} out of range for {k} classes"));
    }
    Ok((s, k))
}

/// `(1/2S) Σ_s ‖Ŷ_s - Y_s‖²` where `targets` are already vectors.
pub fn classification_loss<T: Real>(outputs: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    targets.expect_shape(outputs.shape(), "classification_loss targets")?;
    let s = outputs.batch();
    if s == 0 {
        return Err(shape_err!("classification loss over an empty batch"));
    }
    let sq: T = outputs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&y, &t)| (t - y) * (t - y))
        .sum();
    Ok(sq / T::of(2.0 * s as f64))
}

/// Loss and gradient w.r.t. `outputs` for integer labels.
pub fn loss_and_grad<T: Real>(kind: LossKind, outputs: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (s, k) = check_outputs(outputs, labels)?;
    let mut grad = Tensor::zeros(outputs.shape());
    let inv_s = T::of(1.0 / s as f64);
    let mut total = T::zero();
    for (e, &label) in labels.iter().enumerate() {
        let y = &outputs.data()[e * k..(e + 1) * k];
        let g = &mut grad.data_mut()[e * k..(e + 1) * k];
        match kind {
            LossKind::SquaredError => {
                for c in 0..k {
                    let target = if c == label { T::one() } else { T::zero() };
                    let diff = y[c] - target;
                    total = total + diff * diff * T::of(0.5);
                    g[c] = diff * inv_s;
                }
            }
            LossKind::CrossEntropy => {
                let probs = crate::tensor::softmax(y)?;
                total = total - probs[label].max(T::min_positive_value()).ln();
                for c in 0..k {
                    let target = if c == label { T::one() } else { T::zero() };
                    g[c] = (probs[c] - target) * inv_s;
                }
            }
        }
    }
    Ok((total * inv_s, grad))
}

/// One-hot targets as a `(S, K, 1, 1)` tensor.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([labels.len(), classes, 1, 1]);
    for (e, &l) in labels.iter().enumerate() {
        t.data_mut()[e * classes + l] = T::one();
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kernel(values: &[f64], shape: [usize; 4], mode: BinarizeMode, theta: f64) -> BinarizedKernel<f64> {
        BinarizedKernel::new(Tensor::from_slice(shape, values).unwrap(), mode, theta).unwrap()
    }

    #[test]
    fn binarize_uses_a_hat_and_sign() {
        let mut k = kernel(&[0.5, -0.3], [1, 1, 1, 2], BinarizeMode::Pcnn, 0.0);
        k.set_amplitude(vec![0.4, 0.4]).unwrap();
        let xh = k.binarize().unwrap();
        assert_eq!(xh.data(), &[0.4, -0.4]);
        assert_eq!(k.weights().data(), &[0.5, -0.3]);
    }

    #[test]
    fn uniform_positive_kernel() {
        let mut k = kernel(&[0.2, 0.9, 0.4], [1, 1, 1, 3], BinarizeMode::Pcnn, 0.0);
        k.set_amplitude(vec![0.3; 3]).unwrap();
        assert!(k.binarize().unwrap().data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn xnor_closed_form() {
        let mut k = kernel(&[1.0, -3.0], [1, 1, 1, 2], BinarizeMode::Xnor, 0.0);
        let xh = k.binarize().unwrap();
        assert_eq!(k.a_hat(), 2.0);
        assert_eq!(xh.data(), &[2.0, -2.0]);
    }

    #[test]
    fn sign_of_zero_is_positive() {
        let x = Tensor::<f32>::from_slice([1, 1, 1, 3], &[-0.2, 0.0, 3.0]).unwrap();
        assert_eq!(binarize_activation(&x).data(), &[-1.0, 1.0, 1.0]);
        let twice = binarize_activation(&binarize_activation(&x));
        assert_eq!(twice, binarize_activation(&x));
    }

    #[test]
    fn activation_ste_blocks_outside_window() {
        let x = Tensor::<f32>::from_slice([1, 1, 1, 4], &[-2.0, -0.5, 0.5, 1.5]).unwrap();
        let g = Tensor::full([1, 1, 1, 4], 3.0);
        let gi = binarize_activation_backward(&x, &g).unwrap();
        assert_eq!(gi.data(), &[0.0, 3.0, 3.0, 0.0]);
    }

    #[test]
    fn amplitude_loss_cases() {
        let mut k = kernel(&[1.0, -1.0], [1, 1, 1, 2], BinarizeMode::Pcnn, 2.0);
        k.set_amplitude(vec![0.5, 0.5]).unwrap();
        assert!((k.amplitude_loss() - 0.5).abs() < 1e-15);

        k.set_amplitude(vec![1.0, 1.0]).unwrap();
        assert_eq!(k.amplitude_loss(), 0.0);

        let k0 = kernel(&[0.3, -2.0, 0.1], [1, 1, 1, 3], BinarizeMode::Xnor, 0.0);
        assert_eq!(k0.amplitude_loss(), 0.0);
    }

    #[test]
    fn classification_loss_cases() {
        let out = Tensor::<f64>::from_slice([1, 2, 1, 1], &[0.0, 1.0]).unwrap();
        let tgt = Tensor::from_slice([1, 2, 1, 1], &[1.0, 0.0]).unwrap();
        assert!((classification_loss(&out, &tgt).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(classification_loss(&tgt, &tgt).unwrap(), 0.0);

        let two = Tensor::from_slice([2, 2, 1, 1], &[0.2, 0.7, 0.2, 0.7]).unwrap();
        let one = Tensor::from_slice([1, 2, 1, 1], &[0.2, 0.7]).unwrap();
        let t2 = one_hot::<f64>(&[1, 1], 2);
        let t1 = one_hot::<f64>(&[1], 2);
        let a = classification_loss(&two, &t2).unwrap();
        let b = classification_loss(&one, &t1).unwrap();
        assert!((a - b).abs() < 1e-15);

        assert!(classification_loss(&one, &t2).is_err());
    }

    #[test]
    fn loss_and_grad_matches_classification_loss() {
        let out = Tensor::<f64>::from_slice([2, 3, 1, 1], &[0.1, 0.5, -0.2, 1.0, 0.0, 0.3]).unwrap();
        let labels = [1, 0];
        let (l, g) = loss_and_grad(LossKind::SquaredError, &out, &labels).unwrap();
        let direct = classification_loss(&out, &one_hot(&labels, 3)).unwrap();
        assert!((l - direct).abs() < 1e-15);
        for kind in [LossKind::SquaredError, LossKind::CrossEntropy] {
            let (_, g) = loss_and_grad(kind, &out, &labels).unwrap();
            for i in 0..out.len() {
                let mut up = out.clone();
                let mut dn = out.clone();
                up.data_mut()[i] += 1e-6;
                dn.data_mut()[i] -= 1e-6;
                let num = (loss_and_grad(kind, &up, &labels).unwrap().0
                    - loss_and_grad(kind, &dn, &labels).unwrap().0)
                    / 2e-6;
                assert!((num - g.data()[i]).abs() < 1e-7, "{kind:?}");
            }
        }
        assert!(loss_and_grad(LossKind::SquaredError, &out, &[3, 0]).is_err());
        let _ = g;
    }

    #[test]
    fn ste_gradient_cases() {
        let k = kernel(&[1.5, -2.0], [1, 1, 1, 2], BinarizeMode::Pcnn, 0.0);
        let g = Tensor::from_slice([1, 1, 1, 2], &[0.3, -0.7]).unwrap();
        assert_eq!(k.grad_kernel(&g).unwrap().data(), &[0.0, 0.0]);

        let mut k = kernel(&[0.5, -0.25], [1, 1, 1, 2], BinarizeMode::Pcnn, 0.0);
        k.set_amplitude(vec![1.0, 1.0]).unwrap();
        assert_eq!(k.grad_kernel(&g).unwrap(), g);
    }

    #[test]
    fn amplitude_gradient_cases() {
        let mut k = kernel(&[0.5, -0.5], [1, 1, 1, 2], BinarizeMode::Pcnn, 0.3);
        k.set_amplitude(vec![0.5, 0.5]).unwrap();
        let zero = Tensor::zeros([1, 1, 1, 2]);
        assert_eq!(k.grad_amplitude(&zero).unwrap(), vec![0.0, 0.0]);

        let k1 = kernel(&[0.8], [1, 1, 1, 1], BinarizeMode::Pcnn, 0.0);
        let g = Tensor::from_slice([1, 1, 1, 1], &[0.42]).unwrap();
        assert_eq!(k1.grad_amplitude(&g).unwrap(), vec![0.42]);
    }

    #[test]
    fn amplitude_update_takes_absolute_value() {
        let mut k = kernel(&[0.3], [1, 1, 1, 1], BinarizeMode::Pcnn, 0.0);
        k.set_amplitude(vec![0.1]).unwrap();
        k.eta2 = 1.0;
        k.update_params(&Tensor::zeros([1, 1, 1, 1]), &[0.2]).unwrap();
        assert!((k.amplitude()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_step_leaves_kernel() {
        for mode in [BinarizeMode::Xnor, BinarizeMode::Pcnn] {
            let mut k = kernel(&[0.3, -0.6, 0.2, 0.9], [2, 1, 1, 2], mode, 1e-2);
            let before = k.clone();
            k.update_params(&Tensor::zeros([2, 1, 1, 2]), &[0.0, 0.0]).unwrap();
            assert_eq!(k.weights(), before.weights());
            assert_eq!(k.amplitude(), before.amplitude());
        }
    }

    #[test]
    fn xnor_does_not_gradient_update_amplitude() {
        let mut k = kernel(&[0.3, -0.6], [1, 1, 1, 2], BinarizeMode::Xnor, 0.0);
        k.eta1 = 0.1;
        let dx = Tensor::from_slice([1, 1, 1, 2], &[1.0, 1.0]).unwrap();
        k.update_params(&dx, &[100.0, 100.0]).unwrap();
        // X = [0.2, -0.7] so Â = 0.45 regardless of δ_A.
        assert!((k.a_hat() - 0.45).abs() < 1e-12);
        assert!(k.amplitude().iter().all(|&a| (a - 0.45).abs() < 1e-12));
    }

    #[test]
    fn reconstruction_loss_is_non_increasing_without_data_term() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for mode in [BinarizeMode::Xnor, BinarizeMode::Pcnn] {
            let x: Vec<f64> = (0..2 * 3 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut k = kernel(&x, [2, 3, 3, 3], mode, 0.5);
            k.eta1 = 0.05;
            k.eta2 = 0.05;
            let zero = Tensor::zeros(k.weights().shape());
            let mut prev = k.amplitude_loss();
            for _ in 0..100 {
                let dx = k.grad_kernel(&zero).unwrap();
                let da = k.grad_amplitude(&zero).unwrap();
                k.update_params(&dx, &da).unwrap();
                let now = k.amplitude_loss();
                assert!(now <= prev + 1e-12, "{mode:?}: {now} > {prev}");
                prev = now;
            }
        }
    }

    #[test]
    fn rejects_non_finite_weights() {
        let t = Tensor::<f32>::from_slice([1, 1, 1, 2], &[f32::NAN, 1.0]).unwrap();
        assert!(BinarizedKernel::new(t, BinarizeMode::Xnor, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn amplitude_stays_non_negative(
            x in proptest::collection::vec(-2.0f32..2.0, 8),
            da in proptest::collection::vec(-50.0f32..50.0, 4),
            eta in 0.0f32..2.0,
        ) {
            let mut k = BinarizedKernel::new(Tensor::from_vec([2, 1, 2, 2], x).unwrap(), BinarizeMode::Pcnn, 1e-2).unwrap();
            k.eta2 = eta;
            let dx = k.grad_kernel(&Tensor::full([2, 1, 2, 2], 0.5)).unwrap();
            k.update_params(&dx, &da).unwrap();
            prop_assert!(k.amplitude().iter().all(|&a| a >= 0.0));
            prop_assert!(k.a_hat() >= 0.0);
        }

        #[test]
        fn xnor_a_hat_is_mean_abs(x in proptest::collection::vec(-3.0f32..3.0, 1..40)) {
            let n = x.len();
            let mean = x.iter().map(|v| v.abs() as f64).sum::<f64>() / n as f64;
            let mut k = BinarizedKernel::new(Tensor::from_vec([n, 1, 1, 1], x).unwrap(), BinarizeMode::Xnor, 0.0).unwrap();
            k.binarize().unwrap();
            prop_assert!((k.a_hat() as f64 - mean).abs() <= 1e-6);
        }

        #[test]
        fn total_loss_is_additive(ls in 0.0f64..10.0, la in 0.0f64..10.0) {
            let t = LossTerms::new(ls, la, 4);
            prop_assert_eq!(t.total, ls + la);
        }
    }
}
