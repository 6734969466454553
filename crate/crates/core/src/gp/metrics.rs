use crate::error::{Error, Result};
use crate::gp::predict::Prediction;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

/// Gaussian negative log density of `y` under `N(mean, variance)`.
pub fn gaussian_nll(mean: f64, variance: f64, y: f64) -> f64 {
    0.5 * variance.ln() + (mean - y).powi(2) / (2.0 * variance) + HALF_LOG_2PI
}

/// Mean per-point negative log-likelihood of `y` under the predictive
/// marginals, including the `log 2 pi` constant.
pub fn nll_metric(pred: &Prediction, y: &[f64]) -> Result<f64> {
    Error::check_len(pred.mean.len(), y.len())?;
    if y.is_empty() {
        return Err(Error::contract("NLL of an empty test set"));
    }
    if let Some(i) = pred.variance.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::contract(format!(
            "predictive variance at index {i} is {} (must be positive)",
            pred.variance[i]
        )));
    }
    let total: f64 = pred
        .mean
        .iter()
        .zip(&pred.variance)
        .zip(y)
        .map(|((m, v), t)| gaussian_nll(*m, *v, *t))
        .sum();
    Ok(total / y.len() as f64)
}

pub fn rmse_metric(pred: &Prediction, y: &[f64]) -> Result<f64> {
    Error::check_len(pred.mean.len(), y.len())?;
    if y.is_empty() {
        return Err(Error::contract("RMSE of an empty test set"));
    }
    let sq: f64 = pred.mean.iter().zip(y).map(|(m, t)| (m - t).powi(2)).sum();
    Ok((sq / y.len() as f64).sqrt())
}
