//! Class weights and class-weighted categorical cross-entropy.
//!
//! With `L` the per-class sample counts, the weights are `C = max(L) / L`.
//! The batch loss is
//!
//! ```text
//! loss = -(1/N) * sum_i sum_j y_ij * ln(max(yhat_ij, 1e-12)) * C_j
//! ```
//!
//! and, for `yhat = softmax(o)`, its gradient with respect to the logits of
//! row `i` is `C[y_i] * (yhat_i - y_i) / N` for one-hot `y_i`. The `1/N`
//! factor appears in both so the gradient is the exact derivative of the
//! reported loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Per-class loss multipliers; the largest class has weight exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights(vec![1.0; num_classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `C_i = max(L) / L_i`.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Weight { class: i + 1 });
    }
    let max = *counts
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no class counts".into()))? as f64;
    Ok(ClassWeights(counts.iter().map(|&c| max / c as f64).collect()))
}

fn check_shapes(y: &[Vec<f64>], yhat: &[Vec<f64>], c: &ClassWeights) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("{} targets vs {} predictions", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    for (a, b) in y.iter().zip(yhat) {
        if a.len() != c.len() || b.len() != c.len() {
            return Err(Error::Shape(format!(
                "row widths {} / {} do not match {} classes",
                a.len(),
                b.len(),
                c.len()
            )));
        }
    }
    Ok(())
}

/// Weighted categorical cross-entropy averaged over the batch.
pub fn weighted_cross_entropy(y: &[Vec<f64>], yhat: &[Vec<f64>], c: &ClassWeights) -> Result<f64> {
    check_shapes(y, yhat, c)?;
    let mut total = 0.0;
    for (yr, pr) in y.iter().zip(yhat) {
        for ((t, p), w) in yr.iter().zip(pr).zip(&c.0) {
            if *t != 0.0 {
                total += t * p.max(LOG_CLAMP).ln() * w;
            }
        }
    }
    Ok(-total / y.len() as f64)
}

/// Gradient of [`weighted_cross_entropy`] composed with softmax, at the logits.
///
/// Row `i` is `w_i * (yhat_i - y_i) / N` with `w_i = sum_j y_ij * C_j`, the
/// weight of the row's true class. A literal elementwise `C ⊙ (yhat - y)`
/// is not the derivative of the loss once `C` is non-uniform, because every
/// logit of a row feeds the single weighted log term of its true class.
pub fn loss_gradient_at_logits(
    y: &[Vec<f64>],
    yhat: &[Vec<f64>],
    c: &ClassWeights,
) -> Result<Vec<Vec<f64>>> {
    check_shapes(y, yhat, c)?;
    let n = y.len() as f64;
    Ok(y.iter()
        .zip(yhat)
        .map(|(yr, pr)| {
            let w: f64 = yr.iter().zip(&c.0).map(|(t, w)| t * w).sum();
            yr.iter().zip(pr).map(|(t, p)| w * (p - t) / n).collect()
        })
        .collect())
}

/// One-hot encode zero-based class indices.
pub fn one_hot(classes: &[usize], num_classes: usize) -> Vec<Vec<f64>> {
    classes
        .iter()
        .map(|&k| {
            let mut row = vec![0.0; num_classes];
            row[k] = 1.0;
            row
        })
        .collect()
}

/// Per-sample weighted loss and logit gradient for one-hot target `class`,
/// without the `1/N` batch factor. Used by the training loop.
pub fn sample_loss_and_grad(probs: &[f64], class: usize, weights: &ClassWeights) -> (f64, Vec<f64>) {
    let w = weights.0[class];
    let loss = -w * probs[class].max(LOG_CLAMP).ln();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, p)| w * (p - if j == class { 1.0 } else { 0.0 }))
        .collect();
    (loss, grad)
}
