//! Channel fusion and shape plumbing.

use super::basic::add;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

/// Concatenates NCHW tensors along the channel axis, order preserved.
pub fn concat_channels<F: Scalar>(inputs: &[Tensor<F>]) -> Result<Tensor<F>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArg("concat_channels: no inputs".into()));
    }
    let (n, _, h, w) = inputs[0].dims4()?;
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("(N={n}, H={h}, W={w})"),
                fmt_shape(t.shape()),
            ));
        }
        channels.push(tc);
    }
    let c_total: usize = channels.iter().sum();
    let hw = h * w;
    let mut out = vec![F::zero(); n * c_total * hw];
    for i in 0..n {
        let mut c_off = 0usize;
        for (t, &tc) in inputs.iter().zip(&channels) {
            let d = t.data();
            let src = &d[i * tc * hw..(i + 1) * tc * hw];
            out[(i * c_total + c_off) * hw..(i * c_total + c_off + tc) * hw].copy_from_slice(src);
            c_off += tc;
        }
    }
    let parents: Vec<Tensor<F>> = inputs.to_vec();
    let handles = parents.clone();
    let channels_bw = channels.clone();
    Ok(Tensor::from_op(
        out,
        &[n, c_total, h, w],
        parents,
        move |g| {
            for i in 0..n {
                let mut c_off = 0usize;
                for (t, &tc) in handles.iter().zip(&channels_bw) {
                    if t.wants_grad() {
                        let src = &g[(i * c_total + c_off) * hw..(i * c_total + c_off + tc) * hw];
                        let mut delta = vec![F::zero(); t.len()];
                        delta[i * tc * hw..(i + 1) * tc * hw].copy_from_slice(src);
                        t.accum_grad_owned(delta);
                    }
                    c_off += tc;
                }
            }
        },
    ))
}

/// Channels `[start, end)` of an NCHW tensor, copied out.
pub fn slice_channels<F: Scalar>(x: &Tensor<F>, start: usize, end: usize) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    if start >= end || end > c {
        return Err(Error::InvalidArg(format!(
            "slice_channels: range {start}..{end} invalid for {c} channels"
        )));
    }
    let hw = h * w;
    let tc = end - start;
    let mut out = vec![F::zero(); n * tc * hw];
    {
        let d = x.data();
        for i in 0..n {
            let src = &d[(i * c + start) * hw..(i * c + end) * hw];
            out[i * tc * hw..(i + 1) * tc * hw].copy_from_slice(src);
        }
    }
    let p = x.clone();
    Ok(Tensor::from_op(out, &[n, tc, h, w], vec![x.clone()], move |g| {
        if p.wants_grad() {
            let mut delta = vec![F::zero(); n * c * hw];
            for i in 0..n {
                let dst = &mut delta[(i * c + start) * hw..(i * c + end) * hw];
                dst.copy_from_slice(&g[i * tc * hw..(i + 1) * tc * hw]);
            }
            p.accum_grad_owned(delta);
        }
    }))
}

/// Elementwise feature sum, the alternative fusion mode.
pub fn sum_features<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    add(a, b)
}

/// `(N, ...) -> (N, prod(...))`.
pub fn flatten<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let n = x.shape().first().copied().unwrap_or(1);
    x.reshape(&[n, x.len() / n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;

    #[test]
    fn concat_shape_arithmetic() {
        let a = Tensor::<f32>::zeros(&[2, 4, 8, 8]);
        let b = Tensor::<f32>::zeros(&[2, 4, 8, 8]);
        let y = concat_channels(&[a, b]).unwrap();
        assert_eq!(y.shape(), &[2, 8, 8, 8]);
        let c = Tensor::<f32>::zeros(&[2, 4, 8, 8]);
        let d = Tensor::<f32>::zeros(&[2, 4, 8, 8]);
        let e = Tensor::<f32>::zeros(&[2, 4, 8, 8]);
        assert_eq!(concat_channels(&[c, d, e]).unwrap().shape(), &[2, 12, 8, 8]);
    }

    #[test]
    fn concat_then_slice_restores_halves_bit_exact() {
        let av: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| (i as f64).sin()).collect();
        let bv: Vec<f64> = (0..2 * 2 * 2 * 2).map(|i| (i as f64).cos()).collect();
        let a = Tensor::from_vec(av.clone(), &[2, 3, 2, 2]).unwrap();
        let b = Tensor::from_vec(bv.clone(), &[2, 2, 2, 2]).unwrap();
        let y = concat_channels(&[a, b]).unwrap();
        let sa = slice_channels(&y, 0, 3).unwrap();
        let sb = slice_channels(&y, 3, 5).unwrap();
        assert_eq!(sa.to_vec(), av);
        assert_eq!(sb.to_vec(), bv);
    }

    #[test]
    fn concat_gradient_splits_back_exactly() {
        let a = Tensor::<f64>::param(vec![1.0; 2 * 2 * 2 * 2], &[2, 2, 2, 2]).unwrap();
        let b = Tensor::<f64>::param(vec![2.0; 2 * 2 * 2 * 2], &[2, 2, 2, 2]).unwrap();
        let y = concat_channels(&[a.clone(), b.clone()]).unwrap();
        sum(&y).unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 16]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 16]);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor::<f32>::zeros(&[2, 4, 8, 8]);
        let b = Tensor::<f32>::zeros(&[2, 4, 4, 4]);
        assert!(concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn sum_features_identities() {
        let a = Tensor::<f64>::from_vec(vec![1.0, -2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let z = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert_eq!(sum_features(&a, &z).unwrap().to_vec(), a.to_vec());
        let neg = Tensor::from_vec(a.to_vec().iter().map(|v| -v).collect(), &[1, 1, 2, 2]).unwrap();
        assert_eq!(sum_features(&a, &neg).unwrap().to_vec(), vec![0.0; 4]);
        let bad = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        assert!(sum_features(&a, &bad).is_err());
    }

    #[test]
    fn sum_features_gradient_flows_to_both() {
        let a = Tensor::<f64>::param(vec![1.0; 4], &[1, 1, 2, 2]).unwrap();
        let b = Tensor::<f64>::param(vec![2.0; 4], &[1, 1, 2, 2]).unwrap();
        sum(&sum_features(&a, &b).unwrap()).unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 4]);
    }
}
