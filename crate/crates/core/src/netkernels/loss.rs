use super::tensor::Tensor;
use crate::{Error, Result};

/// Max-subtracted softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn softmax_xent(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let classes = logits.len();
    if target >= classes {
        return Err(Error::TargetOutOfRange { target, classes });
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - z[target];
    let mut grad = softmax(z);
    grad[target] -= 1.0;
    Ok((loss, Tensor::from_vec(logits.shape(), grad)?))
}

/// Mean cross-entropy over a `[B, D]` logit matrix, with the gradient of
/// that mean.
pub fn softmax_xent_batch(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.dim(0) != targets.len() {
        return Err(Error::Shape(format!(
            "logits {:?} for {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    let (batch, classes) = (logits.dim(0), logits.dim(1));
    let inv = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(batch * classes);
    for (row, &t) in logits.data().chunks(classes).zip(targets) {
        let row = Tensor::from_vec(&[classes], row.to_vec())?;
        let (l, g) = softmax_xent(&row, t)?;
        total += l;
        grad.extend(g.data().iter().map(|v| v * inv));
    }
    Ok((total * inv, Tensor::from_vec(&[batch, classes], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor::zeros(&[10]);
        let (loss, _) = softmax_xent(&logits, 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let logits = Tensor::from_vec(&[3], vec![0.0, 800.0, -5.0]).unwrap();
        let (loss, grad) = softmax_xent(&logits, 1).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.is_finite());
    }

    #[test]
    fn gradient_sums_to_zero() {
        let logits = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.5]).unwrap();
        let (_, grad) = softmax_xent(&logits, 2).unwrap();
        assert!(grad.data().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn target_out_of_range() {
        let logits = Tensor::zeros(&[3]);
        assert!(matches!(
            softmax_xent(&logits, 3),
            Err(Error::TargetOutOfRange {
                target: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn softmax_is_a_probability_vector() {
        let p = softmax(&[1e3, -1e3, 0.5, 7.0]);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
