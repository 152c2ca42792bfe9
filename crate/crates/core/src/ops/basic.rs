//! Elementwise arithmetic, matrix multiplication, and reductions.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

fn check_same_shape<F: Scalar>(ctx: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(ctx, fmt_shape(a.shape()), fmt_shape(b.shape())));
    }
    Ok(())
}

/// Elementwise `a + b`.
pub fn add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    check_same_shape("add", a, b)?;
    let out: Vec<F> = {
        let (x, y) = (a.data(), b.data());
        x.iter().zip(y.iter()).map(|(p, q)| *p + *q).collect()
    };
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        a.shape(),
        vec![a.clone(), b.clone()],
        move |g| {
            if pa.wants_grad() {
                pa.accum_grad(g);
            }
            if pb.wants_grad() {
                pb.accum_grad(g);
            }
        },
    ))
}

/// Elementwise `a * b`.
pub fn mul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    check_same_shape("mul", a, b)?;
    let out: Vec<F> = {
        let (x, y) = (a.data(), b.data());
        x.iter().zip(y.iter()).map(|(p, q)| *p * *q).collect()
    };
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        a.shape(),
        vec![a.clone(), b.clone()],
        move |g| {
            if pa.wants_grad() {
                let bd = pb.data();
                let delta: Vec<F> = g.iter().zip(bd.iter()).map(|(gi, bi)| *gi * *bi).collect();
                drop(bd);
                pa.accum_grad_owned(delta);
            }
            if pb.wants_grad() {
                let ad = pa.data();
                let delta: Vec<F> = g.iter().zip(ad.iter()).map(|(gi, ai)| *gi * *ai).collect();
                drop(ad);
                pb.accum_grad_owned(delta);
            }
        },
    ))
}

/// `t * c` for a constant `c`.
pub fn scale<F: Scalar>(t: &Tensor<F>, c: f64) -> Result<Tensor<F>> {
    let c = F::from_f64(c).ok_or_else(|| Error::InvalidArg(format!("scale factor {c}")))?;
    let out: Vec<F> = t.data().iter().map(|v| *v * c).collect();
    let p = t.clone();
    Ok(Tensor::from_op(out, t.shape(), vec![t.clone()], move |g| {
        if p.wants_grad() {
            p.accum_grad_owned(g.iter().map(|gi| *gi * c).collect());
        }
    }))
}

/// `c[m,n] += a[m,k] . b[k,n]`, all row-major.
pub(crate) fn matmul_acc<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, av) in arow.iter().enumerate() {
            let av = *av;
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow.iter()) {
                *cv = *cv + av * *bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] . b[n,k]^T` (b stored row-major as n rows of k).
pub(crate) fn matmul_bt_acc<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (av, bv) in arow.iter().zip(brow.iter()) {
                acc = acc + *av * *bv;
            }
            c[i * n + j] = c[i * n + j] + acc;
        }
    }
}

/// `c[k,n] += a[m,k]^T . b[m,n]`.
pub(crate) fn matmul_at_acc<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, av) in arow.iter().enumerate() {
            let av = *av;
            if av == F::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow.iter()) {
                *cv = *cv + av * *bv;
            }
        }
    }
}

/// Matrix product of 2-D tensors `(m,k) x (k,n) -> (m,n)`.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner dim {k}"), format!("inner dim {k2}")));
    }
    let mut out = vec![F::zero(); m * n];
    matmul_acc(&a.data(), &b.data(), &mut out, m, k, n);
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        &[m, n],
        vec![a.clone(), b.clone()],
        move |g| {
            if pa.wants_grad() {
                // dA = g . B^T
                let mut da = vec![F::zero(); m * k];
                matmul_bt_acc(g, &pb.data(), &mut da, m, n, k);
                pa.accum_grad_owned(da);
            }
            if pb.wants_grad() {
                // dB = A^T . g
                let mut db = vec![F::zero(); k * n];
                matmul_at_acc(&pa.data(), g, &mut db, m, k, n);
                pb.accum_grad_owned(db);
            }
        },
    ))
}

/// Sum of all elements, as a scalar tensor.
pub fn sum<F: Scalar>(t: &Tensor<F>) -> Result<Tensor<F>> {
    let s: F = t.data().iter().copied().sum();
    let p = t.clone();
    let n = t.len();
    Ok(Tensor::from_op(vec![s], &[1], vec![t.clone()], move |g| {
        if p.wants_grad() {
            p.accum_grad_owned(vec![g[0]; n]);
        }
    }))
}

/// Mean of all elements, as a scalar tensor.
pub fn mean<F: Scalar>(t: &Tensor<F>) -> Result<Tensor<F>> {
    let n = t.len();
    let inv = F::one() / F::from_usize(n).expect("usize fits scalar");
    let s: F = t.data().iter().copied().sum();
    let p = t.clone();
    Ok(Tensor::from_op(vec![s * inv], &[1], vec![t.clone()], move |g| {
        if p.wants_grad() {
            p.accum_grad_owned(vec![g[0] * inv; n]);
        }
    }))
}

/// Column `j` of a 2-D tensor, as a length-N vector.
pub fn select_column<F: Scalar>(t: &Tensor<F>, j: usize) -> Result<Tensor<F>> {
    let (rows, cols) = t.dims2()?;
    if j >= cols {
        return Err(Error::InvalidArg(format!("column {j} out of range (cols = {cols})")));
    }
    let out: Vec<F> = {
        let d = t.data();
        (0..rows).map(|i| d[i * cols + j]).collect()
    };
    let p = t.clone();
    Ok(Tensor::from_op(out, &[rows], vec![t.clone()], move |g| {
        if p.wants_grad() {
            let mut delta = vec![F::zero(); rows * cols];
            for (i, gi) in g.iter().enumerate() {
                delta[i * cols + j] = *gi;
            }
            p.accum_grad_owned(delta);
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive triple-loop oracle, kept independent of `matmul_acc`.
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut seed = 1u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let a: Vec<f64> = (0..12).map(|_| next()).collect();
        let b: Vec<f64> = (0..8).map(|_| next()).collect();
        let ta = Tensor::from_vec(a.clone(), &[3, 4]).unwrap();
        let tb = Tensor::from_vec(b.clone(), &[4, 2]).unwrap();
        let c = matmul(&ta, &tb).unwrap();
        let want = matmul_oracle(&a, &b, 3, 4, 2);
        for (x, y) in c.to_vec().iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let c = Tensor::<f32>::zeros(&[3, 2]);
        assert!(add(&a, &c).is_err());
        assert!(mul(&a, &c).is_err());
        assert!(matmul(&a, &b).is_err());
        assert!(select_column(&a, 3).is_err());
    }

    #[test]
    fn select_column_grad_scatters() {
        let t = Tensor::<f64>::param(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let col = select_column(&t, 1).unwrap();
        assert_eq!(col.to_vec(), vec![2.0, 4.0]);
        sum(&col).unwrap().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let t = Tensor::<f64>::param(vec![1.0, 2.0, 3.0, 4.0], &[4]).unwrap();
        mean(&t).unwrap().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![0.25; 4]);
    }
}
