//! Batch normalization over the channel dimension of NCHW tensors.

use super::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use parking_lot::RwLock;
use std::sync::Arc;

/// Per-channel affine parameters plus running statistics.
///
/// `gamma`/`beta` are trainable; the running statistics are plain state
/// updated during train-mode forward passes and used exclusively in eval
/// mode. Running variance stays nonnegative by construction (it is a
/// convex mix of nonnegative batch variances).
pub struct BatchNormState<F: Scalar> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

impl<F: Scalar> BatchNormState<F> {
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArg("batch norm needs at least one channel".into()));
        }
        if !(0.0..1.0).contains(&momentum) || momentum == 0.0 {
            return Err(Error::InvalidArg(format!("batch norm momentum must be in (0,1), got {momentum}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArg(format!("batch norm epsilon must be positive, got {epsilon}")));
        }
        Ok(BatchNormState {
            gamma: Tensor::param(vec![F::one(); channels], &[channels])?,
            beta: Tensor::param(vec![F::zero(); channels], &[channels])?,
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum,
            epsilon,
            mode: Mode::Train,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Normalizes each channel. Train mode uses the batch statistics and
/// updates the running estimates; eval mode depends only on the running
/// statistics. Differentiable w.r.t. the input, `gamma`, and `beta`.
pub fn batch_norm<F: Scalar>(x: &Tensor<F>, state: &BatchNormState<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    if c != state.channels() {
        return Err(Error::shape("batch_norm channels", state.channels().to_string(), c.to_string()));
    }
    match state.mode {
        Mode::Train => batch_norm_train(x, state, n, c, h, w),
        Mode::Eval => batch_norm_eval(x, state, n, c, h, w),
    }
}

fn batch_norm_train<F: Scalar>(
    x: &Tensor<F>,
    state: &BatchNormState<F>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<F>> {
    let hw = h * w;
    let m = n * hw;
    if m == 1 {
        return Err(Error::InvalidArg(
            "batch_norm: train mode with a single element per channel has zero variance".into(),
        ));
    }
    let inv_m = F::one() / F::from_usize(m).expect("count");
    let eps = F::from_f64_c(state.epsilon);

    let mut mean = vec![F::zero(); c];
    let mut var = vec![F::zero(); c];
    let mut inv_std = vec![F::zero(); c];
    let mut x_hat = vec![F::zero(); n * c * hw];
    {
        let d = x.data();
        for ci in 0..c {
            let mut acc = F::zero();
            for i in 0..n {
                let plane = &d[(i * c + ci) * hw..(i * c + ci + 1) * hw];
                acc = acc + plane.iter().copied().sum();
            }
            let mu = acc * inv_m;
            let mut vacc = F::zero();
            for i in 0..n {
                let plane = &d[(i * c + ci) * hw..(i * c + ci + 1) * hw];
                for v in plane {
                    let dlt = *v - mu;
                    vacc = vacc + dlt * dlt;
                }
            }
            let va = vacc * inv_m;
            mean[ci] = mu;
            var[ci] = va;
            inv_std[ci] = F::one() / (va + eps).sqrt();
            for i in 0..n {
                let src = &d[(i * c + ci) * hw..(i * c + ci + 1) * hw];
                let dst = &mut x_hat[(i * c + ci) * hw..(i * c + ci + 1) * hw];
                for (o, v) in dst.iter_mut().zip(src.iter()) {
                    *o = (*v - mu) * inv_std[ci];
                }
            }
        }
    }

    // Running statistics: r <- (1 - momentum) * r + momentum * batch.
    {
        let mom = F::from_f64_c(state.momentum);
        let keep = F::one() - mom;
        let mut rm = state.running_mean.data_mut();
        let mut rv = state.running_var.data_mut();
        for ci in 0..c {
            rm[ci] = keep * rm[ci] + mom * mean[ci];
            rv[ci] = keep * rv[ci] + mom * var[ci];
        }
    }

    let mut out = vec![F::zero(); n * c * hw];
    {
        let ga = state.gamma.data();
        let be = state.beta.data();
        for ci in 0..c {
            for i in 0..n {
                let src = &x_hat[(i * c + ci) * hw..(i * c + ci + 1) * hw];
                let dst = &mut out[(i * c + ci) * hw..(i * c + ci + 1) * hw];
                for (o, v) in dst.iter_mut().zip(src.iter()) {
                    *o = ga[ci] * *v + be[ci];
                }
            }
        }
    }

    let x_hat = Arc::new(RwLock::new(x_hat));
    let (px, pg, pb) = (x.clone(), state.gamma.clone(), state.beta.clone());
    let xh = Arc::clone(&x_hat);
    Ok(Tensor::from_op(
        out,
        x.shape(),
        vec![x.clone(), state.gamma.clone(), state.beta.clone()],
        move |g| {
            let xhat = xh.read();
            // Per-channel reductions of g and g * x_hat.
            let mut sum_g = vec![F::zero(); c];
            let mut sum_gx = vec![F::zero(); c];
            for ci in 0..c {
                for i in 0..n {
                    let base = (i * c + ci) * hw;
                    for (gv, xv) in g[base..base + hw].iter().zip(xhat[base..base + hw].iter()) {
                        sum_g[ci] = sum_g[ci] + *gv;
                        sum_gx[ci] = sum_gx[ci] + *gv * *xv;
                    }
                }
            }
            if pb.wants_grad() {
                pb.accum_grad(&sum_g);
            }
            if pg.wants_grad() {
                pg.accum_grad(&sum_gx);
            }
            if px.wants_grad() {
                let ga = pg.data();
                let inv_m = F::one() / F::from_usize(n * hw).expect("count");
                let mut dx = vec![F::zero(); g.len()];
                for ci in 0..c {
                    let coef = ga[ci] * inv_std[ci];
                    let mg = sum_g[ci] * inv_m;
                    let mgx = sum_gx[ci] * inv_m;
                    for i in 0..n {
                        let base = (i * c + ci) * hw;
                        for k in 0..hw {
                            dx[base + k] = coef * (g[base + k] - mg - xhat[base + k] * mgx);
                        }
                    }
                }
                drop(ga);
                px.accum_grad_owned(dx);
            }
        },
    ))
}

fn batch_norm_eval<F: Scalar>(
    x: &Tensor<F>,
    state: &BatchNormState<F>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<F>> {
    let hw = h * w;
    let eps = F::from_f64_c(state.epsilon);
    let (r_mean, inv_std): (Vec<F>, Vec<F>) = {
        let rm = state.running_mean.data();
        let rv = state.running_var.data();
        if rv.iter().any(|v| *v < F::zero()) {
            return Err(Error::InvalidArg("batch_norm: running variance must be nonnegative".into()));
        }
        (
            rm.clone(),
            rv.iter().map(|v| F::one() / (*v + eps).sqrt()).collect(),
        )
    };

    let mut out = vec![F::zero(); n * c * hw];
    {
        let d = x.data();
        let ga = state.gamma.data();
        let be = state.beta.data();
        for ci in 0..c {
            let a = ga[ci] * inv_std[ci];
            let b = be[ci] - a * r_mean[ci];
            for i in 0..n {
                let base = (i * c + ci) * hw;
                for (o, v) in out[base..base + hw].iter_mut().zip(d[base..base + hw].iter()) {
                    *o = a * *v + b;
                }
            }
        }
    }

    let (px, pg, pb) = (x.clone(), state.gamma.clone(), state.beta.clone());
    Ok(Tensor::from_op(
        out,
        x.shape(),
        vec![x.clone(), state.gamma.clone(), state.beta.clone()],
        move |g| {
            if pb.wants_grad() || pg.wants_grad() {
                let d = px.data();
                let mut sum_g = vec![F::zero(); c];
                let mut sum_gx = vec![F::zero(); c];
                for ci in 0..c {
                    for i in 0..n {
                        let base = (i * c + ci) * hw;
                        for (gv, xv) in g[base..base + hw].iter().zip(d[base..base + hw].iter()) {
                            sum_g[ci] = sum_g[ci] + *gv;
                            sum_gx[ci] = sum_gx[ci] + *gv * (*xv - r_mean[ci]) * inv_std[ci];
                        }
                    }
                }
                if pb.wants_grad() {
                    pb.accum_grad(&sum_g);
                }
                if pg.wants_grad() {
                    pg.accum_grad(&sum_gx);
                }
            }
            if px.wants_grad() {
                let ga = pg.data();
                let mut dx = vec![F::zero(); g.len()];
                for ci in 0..c {
                    let a = ga[ci] * inv_std[ci];
                    for i in 0..n {
                        let base = (i * c + ci) * hw;
                        for (o, gv) in dx[base..base + hw].iter_mut().zip(g[base..base + hw].iter()) {
                            *o = a * *gv;
                        }
                    }
                }
                drop(ga);
                px.accum_grad_owned(dx);
            }
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_stats(data: &[f64], n: usize, c: usize, hw: usize, ci: usize) -> (f64, f64) {
        let mut vals = Vec::new();
        for i in 0..n {
            vals.extend_from_slice(&data[(i * c + ci) * hw..(i * c + ci + 1) * hw]);
        }
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        (mean, var)
    }

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.37).sin() * 2.0 + 0.3).collect()
    }

    #[test]
    fn train_mode_normalizes_per_channel() {
        let (n, c, h, w) = (2, 3, 4, 4);
        let x = Tensor::from_vec(ramp(n * c * h * w), &[n, c, h, w]).unwrap();
        let state = BatchNormState::<f64>::new(c, 0.1, 1e-5).unwrap();
        let y = batch_norm(&x, &state).unwrap();
        let yd = y.to_vec();
        for ci in 0..c {
            let (mean, var) = channel_stats(&yd, n, c, h * w, ci);
            assert!(mean.abs() < 1e-5, "channel {ci} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {ci} var {var}");
        }
    }

    #[test]
    fn eval_mode_with_identity_stats_passes_through() {
        let (n, c, h, w) = (2, 2, 3, 3);
        let x = Tensor::from_vec(ramp(n * c * h * w), &[n, c, h, w]).unwrap();
        let mut state = BatchNormState::<f64>::new(c, 0.1, 1e-12).unwrap();
        state.mode = Mode::Eval;
        let y = batch_norm(&x, &state).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_rescales_normalized_input() {
        let (n, c, h, w) = (4, 1, 4, 4);
        let x = Tensor::from_vec(ramp(n * c * h * w), &[n, c, h, w]).unwrap();
        let state = BatchNormState::<f64>::new(c, 0.1, 1e-9).unwrap();
        state.gamma.copy_from(&[2.0]).unwrap();
        state.beta.copy_from(&[3.0]).unwrap();
        let y = batch_norm(&x, &state).unwrap();
        let (mean, var) = channel_stats(&y.to_vec(), n, c, h * w, 0);
        assert!((mean - 3.0).abs() < 1e-4);
        assert!((var.sqrt() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn degenerate_train_batch_rejected() {
        let x = Tensor::<f64>::ones(&[1, 2, 1, 1]);
        let state = BatchNormState::<f64>::new(2, 0.1, 1e-5).unwrap();
        assert!(batch_norm(&x, &state).is_err());
    }

    #[test]
    fn eval_mode_ignores_batch_statistics() {
        // Same running stats, two different batches: outputs must agree
        // elementwise for the shared element.
        let mut state = BatchNormState::<f64>::new(1, 0.1, 1e-5).unwrap();
        state.mode = Mode::Eval;
        state.running_mean.copy_from(&[0.5]).unwrap();
        state.running_var.copy_from(&[4.0]).unwrap();
        let a = Tensor::from_vec(vec![1.0, 100.0], &[2, 1, 1, 1]).unwrap();
        let b = Tensor::from_vec(vec![1.0, -7.0], &[2, 1, 1, 1]).unwrap();
        let ya = batch_norm(&a, &state).unwrap().to_vec();
        let yb = batch_norm(&b, &state).unwrap().to_vec();
        assert_eq!(ya[0], yb[0]);
    }
}
