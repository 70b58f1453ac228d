use crate::error::{Error, Result};

#[inline]
pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile level {tau} outside (0, 1)")))
    }
}

/// Pinball loss for quantile level `tau`.
///
/// Underprediction (`y_hat <= y`) costs `tau * (y - y_hat)`, overshooting
/// costs `(1 - tau) * (y_hat - y)`.
pub fn pinball(tau: f64, y: f64, y_hat: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball_unchecked(tau, y, y_hat))
}

/// Subgradient of [`pinball`] with respect to `y_hat`. At `y_hat == y` the
/// underprediction branch applies, giving `-tau`.
pub fn pinball_grad(tau: f64, y: f64, y_hat: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball_grad_unchecked(tau, y, y_hat))
}

#[inline]
pub(crate) fn pinball_unchecked(tau: f64, y: f64, y_hat: f64) -> f64 {
    if y_hat <= y {
        tau * (y - y_hat)
    } else {
        (1.0 - tau) * (y_hat - y)
    }
}

#[inline]
pub(crate) fn pinball_grad_unchecked(tau: f64, y: f64, y_hat: f64) -> f64 {
    if y_hat <= y {
        -tau
    } else {
        1.0 - tau
    }
}
