use serde::Serialize;

use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// `(f(p + ε e_j) − f(p − ε e_j)) / 2ε` for every coordinate `j`.
pub fn finite_difference_grad<F>(mut loss: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {eps}")));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        probe[j] = params[j] + eps;
        let plus = finite(loss(&probe)?)?;
        probe[j] = params[j] - eps;
        let minus = finite(loss(&probe)?)?;
        probe[j] = params[j];
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss(v))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_abs_err: f64,
    /// Largest absolute error divided by the larger of the two gradients'
    /// max-norms. Components that are tiny relative to the gradient scale
    /// are judged against that scale rather than against themselves.
    pub max_rel_err: f64,
}

impl GradCheckResult {
    pub fn new(analytic: Vec<f64>, numeric: Vec<f64>) -> Result<Self> {
        if analytic.len() != numeric.len() {
            return Err(Error::DimensionMismatch {
                expected: analytic.len(),
                found: numeric.len(),
            });
        }
        let max_abs_err = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let inf = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let scale = inf(&analytic).max(inf(&numeric));
        let max_rel_err = if scale > 0.0 { max_abs_err / scale } else { 0.0 };
        Ok(Self {
            analytic,
            numeric,
            max_abs_err,
            max_rel_err,
        })
    }
}

/// Compares an analytic gradient with central differences of `loss` at `params`.
pub fn check_gradient<F>(loss: F, params: &[f64], analytic: Vec<f64>, eps: f64) -> Result<GradCheckResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let numeric = finite_difference_grad(loss, params, eps)?;
    GradCheckResult::new(analytic, numeric)
}
