use crate::error::{Error, Result};

/// Default central-difference step for 64-bit reals.
pub const FD_STEP: f64 = 1e-4;

/// Compares an analytic gradient against central differences of `f` at `theta0`.
///
/// Returns `max_i |analytic_i − fd_i| / max(1, |fd_i|)`.
pub fn grad_check<F>(mut f: F, analytic: &[f64], theta0: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != theta0.len() {
        return Err(Error::dim(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            theta0.len()
        )));
    }
    let mut theta = theta0.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = f(&theta)?;
        theta[i] = orig - h;
        let down = f(&theta)?;
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective not finite around parameter {i}"
            )));
        }
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Central-difference gradient of `f` at `theta0`.
pub fn numeric_gradient<F>(mut f: F, theta0: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut theta = theta0.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = f(&theta)?;
        theta[i] = orig - h;
        let down = f(&theta)?;
        theta[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(|w| Ok(w[0] * w[0]), &[6.0], &[3.0], FD_STEP).unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = grad_check(|w| Ok(w[0] * w[0]), &[5.0], &[3.0], FD_STEP).unwrap();
        assert!((err - 1.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_objective_errors() {
        let r = grad_check(|w| Ok((w[0] - 1.0).ln()), &[0.0], &[1.0], FD_STEP);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
