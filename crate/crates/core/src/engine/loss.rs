//! Training losses over batched network outputs.
//!
//! Cross-entropy consumes post-softmax probability rows; the gradient
//! is taken with respect to those probabilities, so it composes with
//! the softmax backward rather than replacing it.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities below this are clamped before the log. The gradient is
/// zero in the clamped region.
pub const PROB_FLOOR: f64 = 1e-12;

/// What a batch is trained against.
#[derive(Debug, Clone, PartialEq)]
pub enum LossTarget {
    /// Class indices, one per row; scored with cross-entropy.
    Classes(Vec<usize>),
    /// Dense regression targets, same shape as the output; mean
    /// squared error.
    Values(Tensor),
}

/// Mean of -log p_y over the batch, probabilities clamped at
/// `PROB_FLOOR`.
pub fn cross_entropy(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    let (batch, classes) = check_rows(scores, labels.len())?;
    let mut total = 0.0;
    for (row, &label) in (0..batch).map(|i| scores.row(i)).zip(labels) {
        if label >= classes {
            return Err(Error::Validation(format!(
                "label {label} outside 0..{classes}"
            )));
        }
        total += -(row[label].max(PROB_FLOOR)).ln();
    }
    Ok(total / batch as f64)
}

/// Gradient of `cross_entropy` with respect to the probability rows:
/// -1/(B * p_y) at the true class, zero elsewhere and in the clamped
/// region.
pub fn cross_entropy_grad(scores: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (batch, classes) = check_rows(scores, labels.len())?;
    let mut grad = Tensor::zeros(scores.shape().to_vec());
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Validation(format!(
                "label {label} outside 0..{classes}"
            )));
        }
        let p = scores.row(i)[label];
        if p > PROB_FLOOR {
            grad.data_mut()[i * classes + label] = -1.0 / (batch as f64 * p);
        }
    }
    Ok(grad)
}

/// Mean squared error over every element.
pub fn mse(predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    check_same_shape(predictions, targets)?;
    let n = predictions.len() as f64;
    Ok(predictions
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Gradient of `mse`: 2 (p - t) / N.
pub fn mse_grad(predictions: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_same_shape(predictions, targets)?;
    let n = predictions.len() as f64;
    let data = predictions
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Tensor::new(predictions.shape().to_vec(), data)
}

pub fn evaluate_loss(scores: &Tensor, target: &LossTarget) -> Result<f64> {
    match target {
        LossTarget::Classes(labels) => cross_entropy(scores, labels),
        LossTarget::Values(values) => mse(scores, values),
    }
}

pub fn loss_grad(scores: &Tensor, target: &LossTarget) -> Result<Tensor> {
    match target {
        LossTarget::Classes(labels) => cross_entropy_grad(scores, labels),
        LossTarget::Values(values) => mse_grad(scores, values),
    }
}

/// One-hot rows for a batch of class labels.
pub fn one_hot(labels: &[usize], class_count: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(vec![labels.len(), class_count]);
    for (i, &label) in labels.iter().enumerate() {
        if label >= class_count {
            return Err(Error::Validation(format!(
                "label {label} outside 0..{class_count}"
            )));
        }
        t.data_mut()[i * class_count + label] = 1.0;
    }
    Ok(t)
}

/// Index of each row's largest score; ties break toward the lower index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let width = scores.shape()[1];
    scores
        .data()
        .chunks(width)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn check_rows(scores: &Tensor, label_count: usize) -> Result<(usize, usize)> {
    if scores.shape().len() != 2 {
        return Err(Error::shape(
            "loss scores",
            "rank-2 tensor",
            format!("{:?}", scores.shape()),
        ));
    }
    let (batch, classes) = (scores.shape()[0], scores.shape()[1]);
    if batch != label_count {
        return Err(Error::shape(
            "loss labels",
            format!("{batch} labels"),
            format!("{label_count} labels"),
        ));
    }
    Ok((batch, classes))
}

fn check_same_shape(predictions: &Tensor, targets: &Tensor) -> Result<()> {
    if predictions.shape() != targets.shape() {
        return Err(Error::shape(
            "mse targets",
            format!("{:?}", predictions.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    Ok(())
}
