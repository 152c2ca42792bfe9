//! Central finite-difference gradient verification.
//!
//! This is the independent oracle the test suites compare analytic
//! gradients against; it never goes through the backward closures of the
//! function being probed except to obtain the analytic side.

use super::{no_grad, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compares the analytic gradient of `f` at `input` against central finite
/// differences with step `h`, returning the largest per-element relative
/// error `|analytic - numeric| / max(1, |numeric|)`.
///
/// `f` must map a tensor to a scalar tensor and be deterministic. Run this
/// in `f64`: the probe perturbs each element by `±h` in turn.
pub fn finite_difference_check<F, Fun>(f: Fun, input: &Tensor<F>, h: F) -> Result<F>
where
    F: Scalar,
    Fun: Fn(&Tensor<F>) -> Result<Tensor<F>>,
{
    if h <= F::zero() {
        return Err(Error::InvalidArg(format!("step h must be positive, got {h}")));
    }

    // Analytic side on a fresh parameter leaf (clean gradient slot).
    let x = Tensor::param(input.to_vec(), input.shape())?;
    let y = f(&x)?;
    let y0 = y.item()?;
    if !y0.is_finite() {
        return Err(Error::NonFinite {
            context: "finite_difference_check: f(x)".into(),
        });
    }
    y.backward()?;
    let analytic = x.grad_or_zeros();

    // Numeric side, evaluated without graph recording.
    let _guard = no_grad();
    let two_h = h + h;
    let mut max_err = F::zero();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let f_plus = f(&x)?.item()?;
        x.data_mut()[i] = orig - h;
        let f_minus = f(&x)?.item()?;
        x.data_mut()[i] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_difference_check: perturbed f(x)".into(),
            });
        }
        let numeric = (f_plus - f_minus) / two_h;
        let err = (analytic[i] - numeric).abs() / F::one().max(numeric.abs());
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
