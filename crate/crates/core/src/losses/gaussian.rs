//! Gaussian and log-Gaussian negative log-likelihoods for the parametric
//! ablations. Both drop the `0.5 * ln(2*pi)` constant.

use crate::error::{Error, Result};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Per-pixel predictive parameters: mean and log-variance.
///
/// For the log-Gaussian model `mu` and `log_var` live in log-height space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu: f64,
    pub log_var: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, log_var: f64) -> Self {
        GaussianParams { mu, log_var }
    }

    fn check(&self, y: f64) -> Result<()> {
        if self.mu.is_finite() && self.log_var.is_finite() && y.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "non-finite NLL input: mu={}, log_var={}, y={y}",
                self.mu, self.log_var
            )))
        }
    }
}

#[inline]
fn clamped(log_var: f64) -> (f64, f64) {
    let lv = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
    let slope = if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&log_var) {
        1.0
    } else {
        0.0
    };
    (lv, slope)
}

/// `0.5 * log_var + (y - mu)^2 / (2 * exp(log_var))`.
pub fn gaussian_nll(params: GaussianParams, y: f64) -> Result<f64> {
    params.check(y)?;
    Ok(gaussian_nll_unchecked(params.mu, params.log_var, y))
}

/// Gradient of [`gaussian_nll`] as `(d/d mu, d/d log_var)`.
pub fn gaussian_nll_grad(params: GaussianParams, y: f64) -> Result<(f64, f64)> {
    params.check(y)?;
    Ok(gaussian_nll_grad_unchecked(params.mu, params.log_var, y))
}

#[inline]
pub(crate) fn gaussian_nll_unchecked(mu: f64, log_var: f64, y: f64) -> f64 {
    let (lv, _) = clamped(log_var);
    let r = y - mu;
    0.5 * lv + r * r * 0.5 * (-lv).exp()
}

#[inline]
pub(crate) fn gaussian_nll_grad_unchecked(mu: f64, log_var: f64, y: f64) -> (f64, f64) {
    let (lv, slope) = clamped(log_var);
    let inv_var = (-lv).exp();
    let r = y - mu;
    (-r * inv_var, slope * (0.5 - 0.5 * r * r * inv_var))
}

/// Log-normal NLL: `ln y + 0.5 * log_var + (ln y - mu)^2 / (2 * exp(log_var))`.
///
/// The `ln y` Jacobian term makes this the density of `y` itself; it is
/// constant in the parameters.
pub fn log_gaussian_nll(params: GaussianParams, y: f64) -> Result<f64> {
    params.check(y)?;
    check_positive(y)?;
    Ok(log_gaussian_nll_unchecked(params.mu, params.log_var, y))
}

pub fn log_gaussian_nll_grad(params: GaussianParams, y: f64) -> Result<(f64, f64)> {
    params.check(y)?;
    check_positive(y)?;
    Ok(gaussian_nll_grad_unchecked(params.mu, params.log_var, y.ln()))
}

fn check_positive(y: f64) -> Result<()> {
    if y > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("log-normal likelihood needs y > 0, got {y}")))
    }
}

#[inline]
pub(crate) fn log_gaussian_nll_unchecked(mu: f64, log_var: f64, y: f64) -> f64 {
    let ly = y.ln();
    ly + gaussian_nll_unchecked(mu, log_var, ly)
}
