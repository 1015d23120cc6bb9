//! Central finite-difference gradient checking.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Result};

/// Relative error used throughout: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    Float::abs(analytic - numeric) / f64::max(1e-8, Float::abs(analytic) + Float::abs(numeric))
}

/// Compares `analytic` against central differences of `f` around `params`
/// and returns the worst relative error over all parameters.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let numeric = numeric_gradient(&mut f, params, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// Central-difference gradient of `f` at `params`.
pub fn numeric_gradient<F>(f: &mut F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let plus = f(&probe)?;
        probe[i] = params[i] - eps;
        let minus = f(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NumericFailure(format!("non-finite loss while probing parameter {i}")));
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_function_is_exact() {
        let coeffs = [0.5, -2.0, 3.25];
        let f = |p: &[f64]| Ok(p.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>() + 1.0);
        let err = grad_check(f, &[0.1, 0.2, 0.3], &coeffs, 1e-3).unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let f = |p: &[f64]| Ok(Float::tanh(p[0]));
        let err = grad_check(f, &[0.0], &[1.0], 1e-3).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn non_finite_probe_fails() {
        let f = |p: &[f64]| Ok(if p[0] > 0.0 { f64::NAN } else { 0.0 });
        let err = grad_check(f, &[0.0], &[0.0], 1e-3).unwrap_err();
        assert!(matches!(err, Error::NumericFailure(_)));
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(grad_check(|_| Ok(0.0), &[1.0], &[0.0], 0.0).is_err());
        assert!(grad_check(|_| Ok(0.0), &vec![1.0; 2], &[0.0], 1e-3).is_err());
    }
}
