//! Central finite differences, used as an independent oracle for the
//! hand-written backward passes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Estimates `∂f/∂x_i ≈ (f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} evaluated to {lo} / {hi}"
            )));
        }
        grad.push((hi - lo) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Smallest denominator used by [`relative_error`]; below this magnitude the
/// comparison degrades gracefully to an absolute one.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Largest element-wise [`relative_error`] between two same-shaped tensors.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> Result<f64> {
    analytic.expect_same_shape("max_relative_error", numeric)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
