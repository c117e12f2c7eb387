//! Losses of the adaptation objective and their logit gradients.

use crate::field::{LabelField, Mask, ProbField};
use crate::{Error, Result};

const CE_CLAMP: f64 = 1e-7;

/// Teacher and student supervision weights from mean confidences.
///
/// `w_te = exp(s·γ·L_te) / (exp(s·γ·L_te) + exp(s·γ·L_st))`, `w_st = 1 - w_te`,
/// evaluated after subtracting the larger exponent.
pub fn supervision_weights(l_te: f64, l_st: f64, gamma: f64, sign: i32) -> (f64, f64) {
    let s = f64::from(sign.signum());
    let a = s * gamma * l_te;
    let b = s * gamma * l_st;
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let w_te = ea / (ea + eb);
    (w_te, 1.0 - w_te)
}

/// Masked binary cross-entropy summed over pixels, and its gradient with
/// respect to the logits, `m · (p - y)`.
pub fn masked_ce(p: &ProbField, y: &LabelField, m: &Mask) -> Result<(f64, Vec<f64>)> {
    if p.dims() != y.dims() || p.dims() != m.dims() {
        return Err(Error::ShapeMismatch("cross-entropy inputs differ in size".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (i, ((&pv, &yv), &keep)) in p.values().iter().zip(y.values()).zip(m.values()).enumerate() {
        if !keep {
            continue;
        }
        let q = pv.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        let t = f64::from(yv);
        loss -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        grad[i] = pv - t;
    }
    Ok((loss, grad))
}

/// `Σ_k p̄_k ln p̄_k` over the foreground/background split of the batch-mean
/// probability, with per-field logit gradients.
pub fn diversity_loss(batch: &[ProbField]) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Empty("diversity batch"));
    }
    let total: usize = batch.iter().map(|p| p.len()).sum();
    let sum: f64 = batch.iter().flat_map(|p| p.values()).sum();
    let mean = (sum / total as f64).clamp(0.0, 1.0);
    let xlnx = |x: f64| if x <= 0.0 { 0.0 } else { x * x.ln() };
    let loss = xlnx(mean) + xlnx(1.0 - mean);
    // dL/dp̄ diverges at the ends; there the loss is already at its maximum
    let slope = if mean <= 0.0 || mean >= 1.0 { 0.0 } else { mean.ln() - (1.0 - mean).ln() };
    let scale = slope / total as f64;
    let grads = batch
        .iter()
        .map(|p| p.values().iter().map(|&v| scale * v * (1.0 - v)).collect())
        .collect();
    Ok((loss, grads))
}
