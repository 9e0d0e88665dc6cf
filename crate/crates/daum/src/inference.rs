//! Sampled predictive inference and uncertainty-threshold decisions.
//!
//! Draws M weight vectors from the SWAG posterior, runs M forward passes, and
//! reports the per-task population mean and variance of the output
//! probabilities. Decision rules: conservative thresholding (positive when
//! uncertain), cross-task uncertainty substitution, and ratio-quantile
//! threshold selection for the passing experiments.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ple::PleNetwork;
use crate::swag::SwagPosterior;

/// Per-instance predictive moments over M sampled forward passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub id: u64,
    /// Per-task predictive mean, in [0, 1].
    pub mean: Vec<f64>,
    /// Per-task population variance (1/M normalization), >= 0.
    pub var: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Sampled inference over a batch. Weight sample `m` is drawn from the stream
/// `(seed, m)`, so results are independent of batch composition and
/// evaluation order. Requires `m_samples >= 2`.
pub fn predict_batch_with_uncertainty(
    net: &PleNetwork,
    posterior: &SwagPosterior,
    x: ArrayView2<f64>,
    ids: &[u64],
    m_samples: usize,
    seed: u64,
) -> Result<Vec<UncertaintyReport>> {
    if m_samples < 2 {
        return Err(Error::argument(format!("need M >= 2 samples, got {m_samples}")));
    }
    if ids.len() != x.nrows() {
        return Err(Error::shape("ids length differs from batch size".to_string()));
    }
    let n = x.nrows();
    let t = net.config.n_tasks;
    let mut mean = vec![vec![0.0; t]; n];
    let mut m2 = vec![vec![0.0; t]; n];
    // two-pass moments would need all M*n*t probabilities; Welford gives the
    // same population variance in one pass
    for m in 0..m_samples {
        let weights = posterior.sample_weights(crate::rng::derive_seed(seed, m as u64));
        let cache = net.forward_batch_with(&weights.values, x)?;
        let count = (m + 1) as f64;
        for i in 0..n {
            for k in 0..t {
                let p = cache.probs[(i, k)];
                let delta = p - mean[i][k];
                mean[i][k] += delta / count;
                m2[i][k] += delta * (p - mean[i][k]);
            }
        }
    }
    Ok((0..n)
        .map(|i| UncertaintyReport {
            id: ids[i],
            mean: mean[i].clone(),
            var: m2[i].iter().map(|v| v / m_samples as f64).collect(),
            n_samples: m_samples,
            seed,
        })
        .collect())
}

/// Single-instance convenience wrapper.
pub fn predict_with_uncertainty(
    net: &PleNetwork,
    posterior: &SwagPosterior,
    x: &[f64],
    m_samples: usize,
    seed: u64,
) -> Result<UncertaintyReport> {
    let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::shape(e.to_string()))?;
    Ok(predict_batch_with_uncertainty(net, posterior, xv, &[0], m_samples, seed)?
        .remove(0))
}

fn check_task(report: &UncertaintyReport, task: usize) -> Result<()> {
    if task >= report.mean.len() {
        return Err(Error::argument(format!(
            "task index {task} out of range for {} tasks",
            report.mean.len()
        )));
    }
    Ok(())
}

/// Conservative decision: +1 when the task variance reaches `tau`, otherwise
/// +1 iff the predictive mean exceeds 0.5.
pub fn threshold_decide(report: &UncertaintyReport, tau: f64, task: usize) -> Result<i8> {
    if tau < 0.0 {
        return Err(Error::argument(format!("tau must be >= 0, got {tau}")));
    }
    check_task(report, task)?;
    if report.var[task] >= tau {
        return Ok(1);
    }
    Ok(if report.mean[task] > 0.5 { 1 } else { -1 })
}

/// Same rule, but the uncertainty branch reads `source_task`'s variance while
/// the score branch reads `target_task`'s mean.
pub fn cross_task_decide(
    report: &UncertaintyReport,
    source_task: usize,
    target_task: usize,
    tau: f64,
) -> Result<i8> {
    if tau < 0.0 {
        return Err(Error::argument(format!("tau must be >= 0, got {tau}")));
    }
    check_task(report, source_task)?;
    check_task(report, target_task)?;
    if report.var[source_task] >= tau {
        return Ok(1);
    }
    Ok(if report.mean[target_task] > 0.5 { 1 } else { -1 })
}

/// Variance threshold that passes `ceil(pass_ratio * N)` instances of the
/// batch for the given task. `pass_ratio = 0` returns +inf (nothing passes);
/// `pass_ratio = 1` returns 0.
pub fn uncertainty_quantile_threshold(
    reports: &[UncertaintyReport],
    task: usize,
    pass_ratio: f64,
) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::argument("empty report batch".to_string()));
    }
    if !(0.0..=1.0).contains(&pass_ratio) {
        return Err(Error::argument(format!("pass_ratio must be in [0,1], got {pass_ratio}")));
    }
    check_task(&reports[0], task)?;
    if pass_ratio == 0.0 {
        return Ok(f64::INFINITY);
    }
    if pass_ratio == 1.0 {
        return Ok(0.0);
    }
    let n_pass = (pass_ratio * reports.len() as f64).ceil() as usize;
    let mut vars: Vec<f64> = reports.iter().map(|r| r.var[task]).collect();
    vars.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(vars[n_pass - 1])
}

/// The pass set behind the quantile threshold: exactly `ceil(pass_ratio * N)`
/// instances, the largest variances first, ties broken by instance index.
pub fn select_passed(
    reports: &[UncertaintyReport],
    task: usize,
    pass_ratio: f64,
) -> Result<Vec<bool>> {
    if reports.is_empty() {
        return Err(Error::argument("empty report batch".to_string()));
    }
    if !(0.0..=1.0).contains(&pass_ratio) {
        return Err(Error::argument(format!("pass_ratio must be in [0,1], got {pass_ratio}")));
    }
    check_task(&reports[0], task)?;
    let n = reports.len();
    let n_pass = if pass_ratio == 0.0 { 0 } else { (pass_ratio * n as f64).ceil() as usize };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        reports[b].var[task]
            .partial_cmp(&reports[a].var[task])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut passed = vec![false; n];
    for &i in order.iter().take(n_pass) {
        passed[i] = true;
    }
    Ok(passed)
}
