// SPDX-License-Identifier: Apache-2.0

use super::{NnError, NnResult, Real, Tensor};

#[inline]
fn sigmoid_scalar<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets,
/// computed from the logits directly. Returns the loss and its gradient
/// with respect to the logits.
pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, targets: &[T]) -> NnResult<(T, Tensor<T>)> {
    if logits.len() != targets.len() {
        return Err(NnError::Dim(format!("{} logits for {} targets", logits.len(), targets.len())));
    }
    let count = T::of(logits.len().max(1) as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(logits.dims());
    for ((&z, &t), g) in logits.data().iter().zip(targets).zip(grad.data_mut()) {
        loss += z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p();
        *g = (sigmoid_scalar(z) - t) / count;
    }
    Ok((loss / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_gives_ln2() {
        let z = Tensor::<f64>::zeros(&[1, 1]);
        assert_eq!(sigmoid(&z).data()[0], 0.5);
        let (l, _) = bce_with_logits(&z, &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_have_tiny_loss() {
        let z = Tensor::<f32>::from_vec(&[1, 2], vec![40.0, -40.0]).unwrap();
        let (l, _) = bce_with_logits(&z, &[1.0, 0.0]).unwrap();
        assert!((0.0..1e-3).contains(&l));
        let p = sigmoid(&Tensor::<f32>::from_vec(&[3], vec![-100.0, 0.0, 100.0]).unwrap());
        assert!(p.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn loss_nonnegative_and_gradient_matches_difference() {
        let zs = [-30.0, -2.5, -0.1, 0.0, 0.7, 3.0, 25.0];
        for &z in &zs {
            for t in [0.0, 1.0] {
                let x = Tensor::<f64>::from_vec(&[1], vec![z]).unwrap();
                let (l, g) = bce_with_logits(&x, &[t]).unwrap();
                assert!(l >= 0.0);
                let h = 1e-5;
                let lp = bce_with_logits(&Tensor::from_vec(&[1], vec![z + h]).unwrap(), &[t]).unwrap().0;
                let lm = bce_with_logits(&Tensor::from_vec(&[1], vec![z - h]).unwrap(), &[t]).unwrap().0;
                assert!((g.data()[0] - (lp - lm) / (2.0 * h)).abs() < 1e-7);
            }
        }
        assert!(bce_with_logits(&Tensor::<f64>::zeros(&[2]), &[1.0]).is_err());
    }
}
