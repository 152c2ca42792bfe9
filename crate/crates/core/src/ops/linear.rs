//! Fully connected layer.

use super::basic::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

/// `x (N,F) . w (F,C) + b (C)`, the classifier head primitive.
pub fn linear<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, fin) = x.dims2()?;
    let (fin2, c) = w.dims2()?;
    if fin != fin2 || b.len() != c {
        return Err(Error::shape(
            "linear",
            format!("x (N,{fin2}) w ({fin2},{c}) b ({c})"),
            format!("x {} w {} b {}", fmt_shape(x.shape()), fmt_shape(w.shape()), fmt_shape(b.shape())),
        ));
    }
    let mut out = vec![F::zero(); n * c];
    {
        let bd = b.data();
        for row in out.chunks_exact_mut(c) {
            row.copy_from_slice(&bd);
        }
    }
    matmul_acc(&x.data(), &w.data(), &mut out, n, fin, c);

    let (px, pw, pb) = (x.clone(), w.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        &[n, c],
        vec![x.clone(), w.clone(), b.clone()],
        move |g| {
            if px.wants_grad() {
                let mut dx = vec![F::zero(); n * fin];
                matmul_bt_acc(g, &pw.data(), &mut dx, n, c, fin);
                px.accum_grad_owned(dx);
            }
            if pw.wants_grad() {
                let mut dw = vec![F::zero(); fin * c];
                matmul_at_acc(&px.data(), g, &mut dw, n, fin, c);
                pw.accum_grad_owned(dw);
            }
            if pb.wants_grad() {
                let mut db = vec![F::zero(); c];
                for row in g.chunks_exact(c) {
                    for (d, gi) in db.iter_mut().zip(row.iter()) {
                        *d = *d + *gi;
                    }
                }
                pb.accum_grad_owned(db);
            }
        },
    ))
}
