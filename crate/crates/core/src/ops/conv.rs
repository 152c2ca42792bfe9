//! 2-D cross-correlation over NCHW tensors.
//!
//! Forward and both backward products run through an im2col buffer so the
//! hot loops are contiguous row operations; the column buffer is rebuilt
//! in backward rather than kept alive on the graph.

use super::basic::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

/// Convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize), stride: usize, padding: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
            return Err(Error::InvalidArg(format!(
                "conv spec extents must be positive: in={in_channels} out={out_channels} kernel={kernel:?} stride={stride}"
            )));
        }
        Ok(ConvSpec { in_channels, out_channels, kernel, stride, padding })
    }

    /// Output spatial extent: `floor((in + 2*pad - kernel)/stride) + 1`.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = (h + 2 * self.padding).checked_sub(self.kernel.0);
        let ow = (w + 2 * self.padding).checked_sub(self.kernel.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh / self.stride + 1, ow / self.stride + 1)),
            _ => Err(Error::InvalidArg(format!(
                "kernel {:?} with padding {} does not fit a {h}x{w} input",
                self.kernel, self.padding
            ))),
        }
    }

    fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }
}

/// Expands one image (C,H,W) to columns (C*kh*kw, oh*ow).
fn im2col<F: Scalar>(img: &[F], c: usize, h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [F]) {
    let (kh, kw) = spec.kernel;
    let (s, pad) = (spec.stride, spec.padding);
    debug_assert_eq!(cols.len(), c * kh * kw * oh * ow);
    let p = oh * ow;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * p..((ci * kh + ky) * kw + kx + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize { F::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns (C*kh*kw, oh*ow) back into an image gradient.
fn col2im_add<F: Scalar>(cols: &[F], c: usize, h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, img: &mut [F]) {
    let (kh, kw) = spec.kernel;
    let (s, pad) = (spec.stride, spec.padding);
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * p..((ci * kh + ky) * kw + kx + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for (ox, v) in src.iter().enumerate() {
                        let ix = (ox * s + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + *v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x (N,Cin,H,W)` with `w (Cout,Cin,kh,kw)` plus a
/// per-channel bias, differentiable in all three operands.
pub fn conv2d<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, spec: &ConvSpec) -> Result<Tensor<F>> {
    let (n, c, h, wd) = x.dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape("conv2d input channels", spec.in_channels.to_string(), c.to_string()));
    }
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape("conv2d weights", fmt_shape(&spec.weight_shape()), fmt_shape(w.shape())));
    }
    if b.len() != spec.out_channels {
        return Err(Error::shape("conv2d bias", spec.out_channels.to_string(), b.len().to_string()));
    }
    let (oh, ow) = spec.out_hw(h, wd)?;
    let (kh, kw) = spec.kernel;
    let k = c * kh * kw;
    let p = oh * ow;
    let co = spec.out_channels;

    let mut out = vec![F::zero(); n * co * p];
    {
        let xd = x.data();
        let wdat = w.data();
        let bd = b.data();
        let mut cols = vec![F::zero(); k * p];
        for i in 0..n {
            im2col(&xd[i * c * h * wd..(i + 1) * c * h * wd], c, h, wd, spec, oh, ow, &mut cols);
            let dst = &mut out[i * co * p..(i + 1) * co * p];
            for (ci, chunk) in dst.chunks_exact_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bd[ci]);
            }
            matmul_acc(&wdat, &cols, dst, co, k, p);
        }
    }

    let (px, pw, pb) = (x.clone(), w.clone(), b.clone());
    let spec = *spec;
    Ok(Tensor::from_op(
        out,
        &[n, co, oh, ow],
        vec![x.clone(), w.clone(), b.clone()],
        move |g| {
            let want_x = px.wants_grad();
            let want_w = pw.wants_grad();
            let want_b = pb.wants_grad();
            if want_b {
                let mut db = vec![F::zero(); co];
                for img in g.chunks_exact(co * p) {
                    for (ci, chunk) in img.chunks_exact(p).enumerate() {
                        db[ci] = db[ci] + chunk.iter().copied().sum();
                    }
                }
                pb.accum_grad_owned(db);
            }
            if !want_x && !want_w {
                return;
            }
            let xd = px.data();
            let wdat = pw.data();
            let mut dw = vec![F::zero(); co * k];
            let mut dx = vec![F::zero(); n * c * h * wd];
            let mut cols = vec![F::zero(); k * p];
            let mut dcols = vec![F::zero(); k * p];
            for i in 0..n {
                let gi = &g[i * co * p..(i + 1) * co * p];
                if want_w {
                    im2col(&xd[i * c * h * wd..(i + 1) * c * h * wd], c, h, wd, &spec, oh, ow, &mut cols);
                    // dW += g_i . cols^T
                    matmul_bt_acc(gi, &cols, &mut dw, co, p, k);
                }
                if want_x {
                    // dcols = W^T . g_i, then scatter back to the image.
                    dcols.iter_mut().for_each(|v| *v = F::zero());
                    matmul_at_acc(&wdat, gi, &mut dcols, co, k, p);
                    col2im_add(&dcols, c, h, wd, &spec, oh, ow, &mut dx[i * c * h * wd..(i + 1) * c * h * wd]);
                }
            }
            drop(xd);
            drop(wdat);
            if want_w {
                pw.accum_grad_owned(dw);
            }
            if want_x {
                px.accum_grad_owned(dx);
            }
        },
    ))
}
