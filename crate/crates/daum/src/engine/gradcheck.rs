//! Central finite-difference gradient verification.

use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub n_params: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error with a floor on the denominator so that near-zero gradient
/// entries are compared absolutely at the 1e-3 scale (central-difference noise
/// is orders of magnitude below that).
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compare `analytic_grad` against central differences of `loss` at `params`.
///
/// `loss` must be a pure function of the parameter vector. A zero-parameter
/// problem passes vacuously.
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic_grad: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::argument(format!("step must be > 0, got {step}")));
    }
    if params.len() != analytic_grad.len() {
        return Err(Error::shape("gradient length differs from parameter length".to_string()));
    }
    let mut probe = params.to_vec();
    let mut max_rel_error = 0.0_f64;
    let mut worst_index = None;
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = loss(&probe);
        probe[i] = orig - step;
        let minus = loss(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = rel_error(analytic_grad[i], numeric);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = Some(i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        tolerance,
        n_params: params.len(),
    })
}
