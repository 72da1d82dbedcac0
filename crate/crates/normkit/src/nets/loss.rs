//! Losses used by the training harness. The classification head fuses
//! softmax with cross-entropy so nothing ever takes `log(0)`.

use crate::tensor::Vector;
use crate::{Error, Result};

/// Cross-entropy of a softmax over raw logits against a class index.
/// Returns the loss and its gradient with respect to the logits
/// (`softmax(logits) - onehot(target)`).
pub fn softmax_cross_entropy(logits: &Vector, target: usize) -> Result<(f64, Vector)> {
    if target >= logits.len() {
        return Err(Error::InvalidConfig(format!(
            "target class {target} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut total = 0.0;
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    for e in &exps {
        total += e;
    }
    let log_z = total.ln() + max;
    let loss = log_z - logits[target];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[target] -= 1.0;
    Ok((loss, Vector::from(grad)))
}

/// Mean squared error `mean((pred - target)^2)` and its gradient with
/// respect to the prediction.
pub fn mse(pred: &Vector, target: &Vector) -> Result<(f64, Vector)> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse", target.len(), pred.len()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target.iter()) {
        let diff = p - t;
        loss += diff * diff;
        grad.push(2.0 * diff / n);
    }
    Ok((loss / n, Vector::from(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::finite_diff_grad;

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, grad) = softmax_cross_entropy(&Vector::zeros(4), 2).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((grad[2] - (0.25 - 1.0)).abs() < 1e-12);
        assert!((grad[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (loss, grad) = softmax_cross_entropy(&Vector::from(vec![1000.0, -1000.0]), 1).unwrap();
        assert!(loss.is_finite());
        assert!(grad.all_finite());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = Vector::from(vec![0.3, -1.2, 0.9]);
        let (_, grad) = softmax_cross_entropy(&logits, 0).unwrap();
        let fd = finite_diff_grad(
            |l| Ok(softmax_cross_entropy(l, 0)?.0),
            &logits,
            1e-5,
        )
        .unwrap();
        for (a, n) in grad.iter().zip(fd.iter()) {
            assert!((a - n).abs() < 1e-8);
        }
    }

    #[test]
    fn mse_value_and_gradient() {
        let pred = Vector::from(vec![1.0, 3.0]);
        let target = Vector::from(vec![0.0, 1.0]);
        let (loss, grad) = mse(&pred, &target).unwrap();
        assert!((loss - 2.5).abs() < 1e-12);
        assert_eq!(grad.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_shapes_and_targets() {
        assert!(softmax_cross_entropy(&Vector::zeros(3), 3).is_err());
        assert!(mse(&Vector::zeros(2), &Vector::zeros(3)).is_err());
    }
}
