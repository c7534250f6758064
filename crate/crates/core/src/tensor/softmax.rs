use super::{check_finite_slice, Real};
use crate::error::{invalid, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(values: &[T]) -> Result<Vec<T>> {
    if values.is_empty() {
        return Err(invalid!("softmax of an empty vector"));
    }
    check_finite_slice(values, "softmax input")?;
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = values.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Gradient w.r.t. the logits given the softmax output and the upstream gradient.
pub fn softmax_backward<T: Real>(probs: &[T], grad: &[T]) -> Vec<T> {
    let inner: T = probs.iter().zip(grad).map(|(&p, &g)| p * g).sum();
    probs.iter().zip(grad).map(|(&p, &g)| p * (g - inner)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_inputs_are_uniform() {
        let p = softmax(&[0.3f64; 7]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn zero_and_ln3() {
        let p = softmax(&[0.0f64, 3.0f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        assert!(softmax::<f32>(&[]).is_err());
        assert!(softmax(&[0.0f32, f32::NAN]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let z = [0.2f64, -1.0, 0.7, 1.5];
        let g = [0.3f64, -0.2, 1.1, 0.05];
        let p = softmax(&z).unwrap();
        let analytic = softmax_backward(&p, &g);
        for i in 0..z.len() {
            let eps = 1e-6;
            let (mut up, mut dn) = (z, z);
            up[i] += eps;
            dn[i] -= eps;
            let f = |v: &[f64]| softmax(v).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            let num = (f(&up) - f(&dn)) / (2.0 * eps);
            assert!((num - analytic[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn normalized_and_positive(v in proptest::collection::vec(-30.0f32..30.0, 1..16)) {
            let p = softmax(&v).unwrap();
            let total: f32 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn shift_invariant(v in proptest::collection::vec(-10.0f64..10.0, 1..12), c in -50.0f64..50.0) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
