//! Training losses: classification cross-entropy and the target-
//! parameterized least-squares discriminator loss.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use parking_lot::RwLock;
use std::sync::Arc;

/// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
/// max-subtraction.
pub fn softmax_cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::shape("softmax_cross_entropy labels", n.to_string(), labels.len().to_string()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArg(format!("label {bad} out of range for {c} classes")));
    }
    let inv_n = F::one() / F::from_usize(n).expect("batch size");
    let mut probs = vec![F::zero(); n * c];
    let mut loss = F::zero();
    {
        let d = logits.data();
        for i in 0..n {
            let row = &d[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row.iter()) {
                *p = (*v - m).exp();
                z = z + *p;
            }
            for p in probs[i * c..(i + 1) * c].iter_mut() {
                *p = *p / z;
            }
            // -log p[label] = log z - (l[label] - m)
            loss = loss + z.ln() - (row[labels[i]] - m);
        }
        loss = loss * inv_n;
    }

    let probs = Arc::new(RwLock::new(probs));
    let labels: Vec<usize> = labels.to_vec();
    let p = logits.clone();
    let saved = Arc::clone(&probs);
    Ok(Tensor::from_op(
        vec![loss],
        &[1],
        vec![logits.clone()],
        move |g| {
            if p.wants_grad() {
                let pr = saved.read();
                let mut delta = vec![F::zero(); n * c];
                let scale = g[0] * inv_n;
                for i in 0..n {
                    for j in 0..c {
                        let mut v = pr[i * c + j];
                        if j == labels[i] {
                            v = v - F::one();
                        }
                        delta[i * c + j] = v * scale;
                    }
                }
                drop(pr);
                p.accum_grad_owned(delta);
            }
        },
    ))
}

/// `(1/N) * sum_i (target - d_i)^2` over a nonempty score tensor.
///
/// With target 0 this is the push-away loss for the second extractor, with
/// target 1 the pull-toward loss for the first, and with target 0.5 the
/// midpoint loss used by the third subnetwork of a three-way setup.
pub fn disc_l2_loss<F: Scalar>(d_out: &Tensor<F>, target: f64) -> Result<Tensor<F>> {
    if d_out.is_empty() {
        return Err(Error::InvalidArg("disc_l2_loss: empty batch".into()));
    }
    if !target.is_finite() {
        return Err(Error::InvalidArg(format!("disc_l2_loss: target must be finite, got {target}")));
    }
    let t = F::from_f64_c(target);
    let n = d_out.len();
    let inv_n = F::one() / F::from_usize(n).expect("batch size");
    let loss: F = {
        let d = d_out.data();
        d.iter().map(|v| (t - *v) * (t - *v)).sum::<F>() * inv_n
    };
    let p = d_out.clone();
    Ok(Tensor::from_op(vec![loss], &[1], vec![d_out.clone()], move |g| {
        if p.wants_grad() {
            let d = p.data();
            let two = F::from_f64_c(2.0);
            let scale = g[0] * inv_n * two;
            let delta: Vec<F> = d.iter().map(|v| scale * (*v - t)).collect();
            drop(d);
            p.accum_grad_owned(delta);
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_log_c() {
        let logits = Tensor::<f64>::zeros(&[4, 10]);
        let loss = softmax_cross_entropy(&logits, &[0, 3, 7, 9]).unwrap();
        assert!((loss.item().unwrap() - 10f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn saturated_correct_logit_has_negligible_loss() {
        let mut v = vec![0.0; 5];
        v[2] = 100.0;
        let logits = Tensor::<f64>::from_vec(v, &[1, 5]).unwrap();
        let loss = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.item().unwrap() < 1e-6);
    }

    #[test]
    fn random_logits_match_log_sum_exp_oracle() {
        let mut s = 11u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) * 4.0 - 2.0
        };
        let (n, c) = (4, 5);
        let lv: Vec<f64> = (0..n * c).map(|_| next()).collect();
        let labels = [1usize, 4, 0, 2];
        let logits = Tensor::from_vec(lv.clone(), &[n, c]).unwrap();
        let loss = softmax_cross_entropy(&logits, &labels).unwrap().item().unwrap();
        // Direct log-sum-exp evaluation.
        let mut want = 0.0;
        for i in 0..n {
            let row = &lv[i * c..(i + 1) * c];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - row[labels[i]];
        }
        want /= n as f64;
        assert!((loss - want).abs() < 1e-6, "got {loss}, want {want}");
    }

    #[test]
    fn label_validation() {
        let logits = Tensor::<f64>::zeros(&[2, 3]);
        assert!(softmax_cross_entropy(&logits, &[0, 3]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn l2_loss_fixtures() {
        // Perfect match.
        let d = Tensor::<f64>::full(&[3, 1], 0.7);
        assert_eq!(disc_l2_loss(&d, 0.7).unwrap().item().unwrap(), 0.0);
        // Unit deviation: target 1, scores all 0.
        let d = Tensor::<f64>::zeros(&[2, 1]);
        assert_eq!(disc_l2_loss(&d, 1.0).unwrap().item().unwrap(), 1.0);
        // Direct evaluation: target 0, scores [0.5, 1.0].
        let d = Tensor::<f64>::from_vec(vec![0.5, 1.0], &[2, 1]).unwrap();
        assert!((disc_l2_loss(&d, 0.0).unwrap().item().unwrap() - 0.625).abs() < 1e-12);
    }

    #[test]
    fn l2_loss_rejects_empty_and_non_finite_target() {
        let d = Tensor::<f64>::from_vec(vec![0.5], &[1, 1]).unwrap();
        assert!(disc_l2_loss(&d, f64::NAN).is_err());
        assert!(disc_l2_loss(&d, f64::INFINITY).is_err());
    }
}
