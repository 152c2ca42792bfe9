//! Pointwise nonlinearities.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use parking_lot::RwLock;
use std::sync::Arc;

/// `max(x, 0)`. Gradient passes where `x > 0`.
pub fn relu<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let out: Vec<F> = x.data().iter().map(|v| v.max(F::zero())).collect();
    let p = x.clone();
    Ok(Tensor::from_op(out, x.shape(), vec![x.clone()], move |g| {
        if p.wants_grad() {
            let d = p.data();
            let delta: Vec<F> = g
                .iter()
                .zip(d.iter())
                .map(|(gi, xi)| if *xi > F::zero() { *gi } else { F::zero() })
                .collect();
            drop(d);
            p.accum_grad_owned(delta);
        }
    }))
}

/// `max(x, alpha * x)` with `alpha` in (0, 1).
pub fn leaky_relu<F: Scalar>(x: &Tensor<F>, alpha: f64) -> Result<Tensor<F>> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::InvalidArg(format!("leaky_relu alpha must be in (0, 1), got {alpha}")));
    }
    let a = F::from_f64_c(alpha);
    let out: Vec<F> = x
        .data()
        .iter()
        .map(|v| if *v > F::zero() { *v } else { a * *v })
        .collect();
    let p = x.clone();
    Ok(Tensor::from_op(out, x.shape(), vec![x.clone()], move |g| {
        if p.wants_grad() {
            let d = p.data();
            let delta: Vec<F> = g
                .iter()
                .zip(d.iter())
                .map(|(gi, xi)| if *xi > F::zero() { *gi } else { a * *gi })
                .collect();
            drop(d);
            p.accum_grad_owned(delta);
        }
    }))
}

fn sigmoid_scalar<F: Scalar>(v: F) -> F {
    // Split by sign so exp never overflows.
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// Elementwise logistic function, stable for large `|x|`.
pub fn sigmoid<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let out: Vec<F> = x.data().iter().map(|v| sigmoid_scalar(*v)).collect();
    let y = Arc::new(RwLock::new(out));
    let p = x.clone();
    let y_saved = Arc::clone(&y);
    Ok(Tensor::from_op_arc(y, x.shape(), vec![x.clone()], move |g| {
        if p.wants_grad() {
            let yv = y_saved.read();
            let delta: Vec<F> = g
                .iter()
                .zip(yv.iter())
                .map(|(gi, yi)| *gi * *yi * (F::one() - *yi))
                .collect();
            drop(yv);
            p.accum_grad_owned(delta);
        }
    }))
}

/// Row-wise softmax of a 2-D tensor. Plain math, not recorded on the
/// graph; used for prediction and ensembling.
pub fn softmax_rows<F: Scalar>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c) = logits.dims2()?;
    let d = logits.data();
    let mut out = vec![F::zero(); n * c];
    for i in 0..n {
        let row = &d[i * c..(i + 1) * c];
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row.iter()) {
            *o = (*v - m).exp();
            z = z + *o;
        }
        for o in out[i * c..(i + 1) * c].iter_mut() {
            *o = *o / z;
        }
    }
    drop(d);
    Tensor::from_vec(out, &[n, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor::<f64>::from_vec(vec![2.0, -2.0, 0.0], &[3]).unwrap();
        let y = leaky_relu(&x, 0.1).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, -0.2, 0.0]);
        assert!(leaky_relu(&x, 0.0).is_err());
        assert!(leaky_relu(&x, 1.0).is_err());
    }

    #[test]
    fn sigmoid_fixed_points_and_saturation() {
        let x = Tensor::<f64>::from_vec(vec![0.0, 40.0, -40.0, 3f64.ln()], &[4]).unwrap();
        let y = sigmoid(&x).unwrap().to_vec();
        assert_eq!(y[0], 0.5);
        assert!((y[1] - 1.0).abs() < 1e-12);
        assert!(y[2] > 0.0 && y[2] < 1e-12);
        assert!((y[3] - 0.75).abs() < 1e-12); // 3 / (1 + 3)
        // No overflow at extreme magnitudes.
        let big = Tensor::<f64>::from_vec(vec![1e12, -1e12], &[2]).unwrap();
        let yb = sigmoid(&big).unwrap().to_vec();
        assert!(yb.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rows_normalizes() {
        let t = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 1000.0, 1000.0, 1000.0], &[2, 3]).unwrap();
        let s = softmax_rows(&t).unwrap().to_vec();
        for i in 0..2 {
            let row_sum: f64 = s[i * 3..(i + 1) * 3].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
        assert!((s[3] - 1.0 / 3.0).abs() < 1e-12);
    }
}
