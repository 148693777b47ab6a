//! Time-weighted softmax cross-entropy over per-step outputs.

use crate::error::{Error, Result};
use crate::math::{softmax_into, Matrix, Vector};

/// `weights[k] = exp(-(num_steps - 1 - k) * dt_seconds)`: the final step has
/// weight 1 and earlier steps decay at one e-fold per second before the end.
pub fn make_exp_weights(num_steps: usize, dt_seconds: f64) -> Vec<f64> {
    (0..num_steps)
        .map(|k| (-((num_steps - 1 - k) as f64) * dt_seconds).exp())
        .collect()
}

/// Loss `Σ_k w_k · -ln softmax(logits_k)[label]` and its gradient with respect
/// to every step's logits.
pub fn weighted_xent_loss(step_logits: &[Vector], label: usize, weights: &[f64]) -> Result<(f64, Vec<Vector>)> {
    if weights.len() != step_logits.len() {
        return Err(Error::dim("loss weights", step_logits.len(), weights.len()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(step_logits.len());
    for (logits, &w) in step_logits.iter().zip(weights) {
        let (l, g) = xent_single(logits, label)?;
        loss += w * l;
        grads.push(g.iter().map(|x| x * w).collect());
    }
    Ok((loss, grads))
}

fn xent_single(logits: &[f64], label: usize) -> Result<(f64, Vector)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let mut p = Vector::zeros(logits.len());
    softmax_into(logits, &mut p);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    p[label] -= 1.0;
    Ok((loss, p))
}

/// Batched form: `step_logits[k]` is `B × C`. Returns per-row losses and the
/// gradient matrices, both already multiplied by `row_scale`.
pub(crate) fn weighted_xent_batch(
    step_logits: &[Matrix],
    labels: &[usize],
    weights: &[f64],
    row_scale: f64,
) -> Result<(Vec<f64>, Vec<Matrix>)> {
    if weights.len() != step_logits.len() {
        return Err(Error::dim("loss weights", step_logits.len(), weights.len()));
    }
    let mut losses = vec![0.0; labels.len()];
    let mut grads = Vec::with_capacity(step_logits.len());
    for (logits, &w) in step_logits.iter().zip(weights) {
        if logits.rows() != labels.len() {
            return Err(Error::dim("loss batch rows", labels.len(), logits.rows()));
        }
        let mut g = Matrix::zeros(logits.rows(), logits.cols());
        for (r, &label) in labels.iter().enumerate() {
            let (l, d) = xent_single(logits.row(r), label)?;
            losses[r] += w * l;
            for (dst, src) in g.row_mut(r).iter_mut().zip(d.iter()) {
                *dst = src * w * row_scale;
            }
        }
        grads.push(g);
    }
    Ok((losses, grads))
}
