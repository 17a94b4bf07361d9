//! Loss functions and the probability-combination rule. Each loss returns
//! (value, gradient) in one call so the training step never recomputes a
//! forward pass for the backward seed.

use num_traits::Float;

/// Numerically stable softmax.
pub fn softmax<F: Float>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy against a single target index, gradient w.r.t. the logits.
/// The loss is -log softmax(target), so uniform logits over n classes give
/// exactly ln(n).
pub fn cross_entropy_from_logits<F: Float>(logits: &[F], target: usize) -> (F, Vec<F>) {
    assert!(target < logits.len());
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for &l in logits {
        sum = sum + (l - max).exp();
    }
    let log_sum = sum.ln() + max;
    let loss = log_sum - logits[target];
    let mut grad: Vec<F> = logits.iter().map(|&l| (l - log_sum).exp()).collect();
    grad[target] = grad[target] - F::one();
    (loss, grad)
}

/// Binary cross-entropy on a logit, stable for large |z|:
/// L = max(z,0) - z*y + ln(1 + e^-|z|), dL/dz = sigmoid(z) - y.
pub fn bce_with_logits<F: Float>(logit: F, target: F) -> (F, F) {
    let zero = F::zero();
    let pos = if logit > zero { logit } else { zero };
    let loss = pos - logit * target + (F::one() + (-logit.abs()).exp()).ln();
    let sig = F::one() / (F::one() + (-logit).exp());
    (loss, sig - target)
}

/// Mean squared error over paired slices; gradient w.r.t. predictions.
pub fn mse<F: Float>(pred: &[F], target: &[F]) -> (F, Vec<F>) {
    assert_eq!(pred.len(), target.len());
    assert!(!pred.is_empty());
    let n = F::from(pred.len()).unwrap();
    let two = F::from(2.0).unwrap();
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let d = p - t;
        loss = loss + d * d;
        grad.push(two * d / n);
    }
    (loss / n, grad)
}

pub fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check::{grad_close, numeric_grad};

    #[test]
    fn softmax_sums_to_one_and_orders() {
        let p = softmax(&[1.0f64, 2.0, 3.0]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0f64, 1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    // [PAPER] uniform logits over 10 classes give CE = ln 10.
    #[test]
    fn uniform_ten_class_ce_is_ln_ten() {
        let logits = [0.0f64; 10];
        let (loss, _) = cross_entropy_from_logits(&logits, 3);
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_gradient_matches_finite_difference() {
        let logits = vec![0.3f64, -1.1, 2.0, 0.7];
        let (_, grad) = cross_entropy_from_logits(&logits, 2);
        let ngrad = numeric_grad(&logits, |l| cross_entropy_from_logits(l, 2).0);
        assert!(grad_close(&grad, &ngrad));
        // Softmax-minus-onehot structure: gradient sums to zero.
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        for &(z, y) in &[(0.7f64, 1.0f64), (-2.0, 0.0), (35.0, 0.0), (-35.0, 1.0)] {
            let (loss, g) = bce_with_logits(z, y);
            assert!(loss.is_finite());
            let ng = numeric_grad(&[z], |v| bce_with_logits(v[0], y).0);
            assert!(grad_close(&[g], &ng), "z={z} y={y}");
        }
    }

    #[test]
    fn mse_value_and_gradient() {
        let (loss, grad) = mse(&[1.0f64, 2.0], &[0.0, 0.0]);
        assert!((loss - 2.5).abs() < 1e-12);
        let ngrad = numeric_grad(&[1.0, 2.0], |p| mse(p, &[0.0, 0.0]).0);
        assert!(grad_close(&grad, &ngrad));
    }
}
