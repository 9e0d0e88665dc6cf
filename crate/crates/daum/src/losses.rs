//! Loss functions: per-task binary cross-entropy, the Gaussian mean-variance
//! loss, and unweighted multi-task aggregation.

use crate::error::{Error, Result};

/// Probability clamp used before taking logs.
pub const PROB_EPS: f64 = 1e-12;
/// Variance floor for the Gaussian negative log-likelihood.
pub const VAR_FLOOR: f64 = 1e-8;

/// Total loss plus its per-task decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_task: Vec<f64>,
}

/// Binary cross-entropy; the prediction is clamped to `[PROB_EPS, 1-PROB_EPS]`.
pub fn bce(q_pred: f64, y: f64) -> f64 {
    let q = q_pred.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -y * q.ln() - (1.0 - y) * (1.0 - q).ln()
}

/// Gaussian negative log-likelihood `0.5*ln(var) + (y-mu)^2/(2 var)`.
///
/// Variances below [`VAR_FLOOR`] are clamped; the returned flag reports
/// whether clamping happened.
pub fn gaussian_nll(mu: f64, var: f64, y: f64) -> (f64, bool) {
    let clamped = var < VAR_FLOOR;
    let v = var.max(VAR_FLOOR);
    let r = y - mu;
    (0.5 * v.ln() + r * r / (2.0 * v), clamped)
}

/// Unweighted sum of per-task BCE terms.
pub fn multitask_loss(preds: &[f64], labels: &[f64]) -> Result<LossValue> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let per_task: Vec<f64> = preds.iter().zip(labels).map(|(&q, &y)| bce(q, y)).collect();
    Ok(LossValue { total: per_task.iter().sum(), per_task })
}
