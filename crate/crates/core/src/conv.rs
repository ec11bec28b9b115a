//! 2-D convolution kernels (forward and backward passes).
//!
//! Only the configuration the denoiser needs: stride 1, odd square kernels,
//! zero padding of `(k-1)/2`, so spatial dimensions are preserved. Inputs are
//! `C_in x H x W`, kernels `C_out x C_in x k x k`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Validated conv2d geometry shared by the forward and backward passes.
struct ConvDims {
    c_out: usize,
    c_in: usize,
    k: usize,
    h: usize,
    w: usize,
    pad: usize,
}

fn check_dims(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<ConvDims> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    if ishape.len() != 3 || kshape.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: ishape.to_vec(),
            rhs: kshape.to_vec(),
        });
    }
    let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
    let (c_out, kc_in, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if kc_in != c_in || kh != kw || kh % 2 == 0 {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: ishape.to_vec(),
            rhs: kshape.to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: kshape.to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(ConvDims {
        c_out,
        c_in,
        k: kh,
        h,
        w,
        pad: (kh - 1) / 2,
    })
}

/// Forward pass: cross-correlation with zero padding, stride 1.
///
/// `out[co, y, x] = bias[co] + sum_{ci,i,j} in[ci, y+i-p, x+j-p] * K[co,ci,i,j]`
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let d = check_dims(input, kernel, bias)?;
    let (h, w, k, pad) = (d.h, d.w, d.k, d.pad as isize);
    let inp = input.data();
    let ker = kernel.data();
    let mut out = vec![0.0; d.c_out * h * w];

    for co in 0..d.c_out {
        let out_plane = &mut out[co * h * w..(co + 1) * h * w];
        if let Some(b) = bias {
            let bv = b.data()[co];
            out_plane.iter_mut().for_each(|v| *v = bv);
        }
        for ci in 0..d.c_in {
            let in_plane = &inp[ci * h * w..(ci + 1) * h * w];
            for i in 0..k {
                let dy = i as isize - pad;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = (h as isize).min(h as isize - dy) as usize;
                for j in 0..k {
                    let dx = j as isize - pad;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize).min(w as isize - dx) as usize;
                    let kv = ker[((co * d.c_in + ci) * k + i) * k + j];
                    if kv == 0.0 {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let src = (y as isize + dy) as usize * w;
                        let dst = y * w;
                        axpy(
                            kv,
                            &in_plane[(src as isize + x_lo as isize + dx) as usize
                                ..(src as isize + x_hi as isize + dx) as usize],
                            &mut out_plane[dst + x_lo..dst + x_hi],
                        );
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.c_out, h, w], out)
}

/// `out += a * x` over contiguous rows; the shape of every hot conv loop.
#[inline]
fn axpy(a: f64, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Gradient of the conv output with respect to its input.
///
/// This is the adjoint of [`conv2d`] in the input argument:
/// `din[ci, y, x] = sum_{co,i,j} g[co, y+p-i, x+p-j] * K[co,ci,i,j]`.
pub fn conv2d_grad_input(grad_out: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let kshape = kernel.shape();
    let gshape = grad_out.shape();
    if kshape.len() != 4 || gshape.len() != 3 || gshape[0] != kshape[0] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_grad_input",
            lhs: gshape.to_vec(),
            rhs: kshape.to_vec(),
        });
    }
    let (c_out, c_in, k) = (kshape[0], kshape[1], kshape[2]);
    let (h, w) = (gshape[1], gshape[2]);
    let pad = (k - 1) as isize / 2;
    let g = grad_out.data();
    let ker = kernel.data();
    let mut din = vec![0.0; c_in * h * w];

    for ci in 0..c_in {
        let din_plane = &mut din[ci * h * w..(ci + 1) * h * w];
        for co in 0..c_out {
            let g_plane = &g[co * h * w..(co + 1) * h * w];
            for i in 0..k {
                let dy = pad - i as isize;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = (h as isize).min(h as isize - dy) as usize;
                for j in 0..k {
                    let dx = pad - j as isize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize).min(w as isize - dx) as usize;
                    let kv = ker[((co * c_in + ci) * k + i) * k + j];
                    if kv == 0.0 {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let src = (y as isize + dy) as usize * w;
                        let dst = y * w;
                        axpy(
                            kv,
                            &g_plane[(src as isize + x_lo as isize + dx) as usize
                                ..(src as isize + x_hi as isize + dx) as usize],
                            &mut din_plane[dst + x_lo..dst + x_hi],
                        );
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_in, h, w], din)
}

/// Gradient of the conv output with respect to the kernel.
///
/// `dK[co,ci,i,j] = sum_{y,x} g[co, y, x] * in[ci, y+i-p, x+j-p]`.
pub fn conv2d_grad_kernel(grad_out: &Tensor, input: &Tensor, k: usize) -> Result<Tensor> {
    let gshape = grad_out.shape();
    let ishape = input.shape();
    if gshape.len() != 3 || ishape.len() != 3 || gshape[1..] != ishape[1..] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_grad_kernel",
            lhs: gshape.to_vec(),
            rhs: ishape.to_vec(),
        });
    }
    let (c_out, c_in) = (gshape[0], ishape[0]);
    let (h, w) = (gshape[1], gshape[2]);
    let pad = (k - 1) as isize / 2;
    let g = grad_out.data();
    let inp = input.data();
    let mut dk = vec![0.0; c_out * c_in * k * k];

    for co in 0..c_out {
        let g_plane = &g[co * h * w..(co + 1) * h * w];
        for ci in 0..c_in {
            let in_plane = &inp[ci * h * w..(ci + 1) * h * w];
            for i in 0..k {
                let dy = i as isize - pad;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = (h as isize).min(h as isize - dy) as usize;
                for j in 0..k {
                    let dx = j as isize - pad;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize).min(w as isize - dx) as usize;
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let src = (y as isize + dy) as usize * w;
                        let dst = y * w;
                        let g_row = &g_plane[dst + x_lo..dst + x_hi];
                        let in_row = &in_plane[(src as isize + x_lo as isize + dx) as usize
                            ..(src as isize + x_hi as isize + dx) as usize];
                        acc += g_row.iter().zip(in_row).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dk[((co * c_in + ci) * k + i) * k + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![c_out, c_in, k, k], dk)
}

/// Gradient of the conv output with respect to the bias: spatial sums.
pub fn conv2d_grad_bias(grad_out: &Tensor) -> Result<Tensor> {
    let gshape = grad_out.shape();
    if gshape.len() != 3 {
        return Err(Error::InvalidShape(format!(
            "conv2d_grad_bias expects C x H x W, got {gshape:?}"
        )));
    }
    let (c_out, h, w) = (gshape[0], gshape[1], gshape[2]);
    let g = grad_out.data();
    let data = (0..c_out)
        .map(|co| g[co * h * w..(co + 1) * h * w].iter().sum())
        .collect();
    Tensor::new(vec![c_out], data)
}
