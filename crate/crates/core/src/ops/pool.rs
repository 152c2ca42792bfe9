//! Spatial pooling over NCHW tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    GlobalAvg,
}

/// Dispatch on pooling kind; `window`/`stride` are ignored for `GlobalAvg`.
pub fn pool<F: Scalar>(x: &Tensor<F>, kind: PoolKind, window: usize, stride: usize) -> Result<Tensor<F>> {
    match kind {
        PoolKind::Max => max_pool2d(x, window, stride),
        PoolKind::Avg => avg_pool2d(x, window, stride),
        PoolKind::GlobalAvg => global_avg_pool(x),
    }
}

fn pool_geometry(h: usize, w: usize, k: usize, s: usize) -> Result<(usize, usize)> {
    if k == 0 || s == 0 {
        return Err(Error::InvalidArg("pool window and stride must be positive".into()));
    }
    if k > h || k > w {
        return Err(Error::InvalidArg(format!("pool window {k} larger than input {h}x{w}")));
    }
    Ok(((h - k) / s + 1, (w - k) / s + 1))
}

/// Max pooling. The gradient routes to the first (lowest flat index)
/// maximal element of each window.
pub fn max_pool2d<F: Scalar>(x: &Tensor<F>, k: usize, s: usize) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = pool_geometry(h, w, k, s)?;
    let planes = n * c;
    let mut out = vec![F::zero(); planes * oh * ow];
    let mut argmax = vec![0usize; planes * oh * ow];
    {
        let d = x.data();
        for pl in 0..planes {
            let plane = &d[pl * h * w..(pl + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0usize;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = (oy * s + ky) * w + ox * s + kx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[(pl * oh + oy) * ow + ox] = best;
                    argmax[(pl * oh + oy) * ow + ox] = pl * h * w + best_idx;
                }
            }
        }
    }
    let p = x.clone();
    Ok(Tensor::from_op(out, &[n, c, oh, ow], vec![x.clone()], move |g| {
        if p.wants_grad() {
            let mut dx = vec![F::zero(); n * c * h * w];
            for (gi, idx) in g.iter().zip(argmax.iter()) {
                dx[*idx] = dx[*idx] + *gi;
            }
            p.accum_grad_owned(dx);
        }
    }))
}

/// Average pooling.
pub fn avg_pool2d<F: Scalar>(x: &Tensor<F>, k: usize, s: usize) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = pool_geometry(h, w, k, s)?;
    let planes = n * c;
    let inv = F::one() / F::from_usize(k * k).expect("window size");
    let mut out = vec![F::zero(); planes * oh * ow];
    {
        let d = x.data();
        for pl in 0..planes {
            let plane = &d[pl * h * w..(pl + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = F::zero();
                    for ky in 0..k {
                        for kx in 0..k {
                            acc = acc + plane[(oy * s + ky) * w + ox * s + kx];
                        }
                    }
                    out[(pl * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
    }
    let p = x.clone();
    Ok(Tensor::from_op(out, &[n, c, oh, ow], vec![x.clone()], move |g| {
        if p.wants_grad() {
            let mut dx = vec![F::zero(); n * c * h * w];
            for pl in 0..planes {
                let dplane = &mut dx[pl * h * w..(pl + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g[(pl * oh + oy) * ow + ox] * inv;
                        for ky in 0..k {
                            for kx in 0..k {
                                let idx = (oy * s + ky) * w + ox * s + kx;
                                dplane[idx] = dplane[idx] + gv;
                            }
                        }
                    }
                }
            }
            p.accum_grad_owned(dx);
        }
    }))
}

/// Mean over the full spatial extent: `(N,C,H,W) -> (N,C,1,1)`.
pub fn global_avg_pool<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let inv = F::one() / F::from_usize(h * w).expect("spatial size");
    let out: Vec<F> = {
        let d = x.data();
        d.chunks_exact(h * w)
            .map(|plane| plane.iter().copied().sum::<F>() * inv)
            .collect()
    };
    let p = x.clone();
    Ok(Tensor::from_op(out, &[n, c, 1, 1], vec![x.clone()], move |g| {
        if p.wants_grad() {
            let mut dx = vec![F::zero(); n * c * h * w];
            for (plane, gi) in dx.chunks_exact_mut(h * w).zip(g.iter()) {
                let gv = *gi * inv;
                plane.iter_mut().for_each(|v| *v = gv);
            }
            p.accum_grad_owned(dx);
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_avg_of_constant_plane() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 7.0);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![7.0]);
    }

    #[test]
    fn max_pool_picks_maximum() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let y = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.to_vec(), vec![4.0]);
    }

    #[test]
    fn max_pool_tie_routes_to_first_flat_index() {
        let x = Tensor::<f64>::param(vec![5.0, 1.0, 2.0, 5.0], &[1, 1, 2, 2]).unwrap();
        let y = max_pool2d(&x, 2, 2).unwrap();
        crate::ops::sum(&y).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn avg_pool_matches_block_mean_oracle() {
        let mut s = 3u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let xv: Vec<f64> = (0..16).map(|_| next()).collect();
        let x = Tensor::from_vec(xv.clone(), &[1, 1, 4, 4]).unwrap();
        let y = avg_pool2d(&x, 2, 2).unwrap().to_vec();
        for oy in 0..2 {
            for ox in 0..2 {
                let want = (xv[(2 * oy) * 4 + 2 * ox]
                    + xv[(2 * oy) * 4 + 2 * ox + 1]
                    + xv[(2 * oy + 1) * 4 + 2 * ox]
                    + xv[(2 * oy + 1) * 4 + 2 * ox + 1])
                    / 4.0;
                assert_eq!(y[oy * 2 + ox], want);
            }
        }
    }

    #[test]
    fn oversized_window_rejected_except_global() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(max_pool2d(&x, 3, 1).is_err());
        assert!(avg_pool2d(&x, 3, 1).is_err());
        assert!(pool(&x, PoolKind::GlobalAvg, 99, 99).is_ok());
    }
}
