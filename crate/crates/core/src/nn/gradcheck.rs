use crate::error::{Error, Result};

/// Compares `analytic` against central differences of `loss` around `theta`
/// and returns the worst per-coordinate relative error
/// `|a - n| / max(1e-8, |a| + |n|)`.
///
/// `loss` must be deterministic: any dropout masks have to be replayed
/// from a fixed seed on every call.
pub fn grad_check<F>(mut loss: F, theta: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Parameter(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    if theta.len() != analytic.len() {
        return Err(Error::shape(
            "grad_check",
            format!(
                "{} parameters but {} gradients",
                theta.len(),
                analytic.len()
            ),
        ));
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let plus = loss(&probe)?;
        probe[i] = theta[i] - eps;
        let minus = loss(&probe)?;
        probe[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while perturbing coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
