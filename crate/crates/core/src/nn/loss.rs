use crate::error::{Error, Result};
use crate::nn::layer::softmax;
use crate::tensor::Tensor;

/// Softmax cross-entropy on raw class scores. Returns the loss and its
/// gradient with respect to the scores, `softmax(scores) - onehot(label)`.
pub fn cross_entropy_loss(scores: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if scores.rank() != 1 {
        return Err(Error::param(format!(
            "scores must be a vector, got {:?}",
            scores.shape()
        )));
    }
    if label >= scores.len() {
        return Err(Error::param(format!(
            "label {label} out of range for {} classes",
            scores.len()
        )));
    }
    let s = scores.data();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = (max - s[label]) + log_sum;
    let mut d = softmax(scores);
    d.data_mut()[label] -= 1.0;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, d))
}
