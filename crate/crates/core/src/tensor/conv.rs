//! Convolution kernels: im2col lowering plus two matmul variants.
//!
//! The matmuls carry essentially all training FLOPs, so they are written as
//! contiguous-row loops the compiler can vectorize, and split across threads
//! for large problems. Each output element is accumulated by exactly one
//! thread in a fixed order, so results are bit-identical for any thread count.

use rayon::prelude::*;

use super::{Scalar, TensorData};
use crate::error::{Error, Result};

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_FLOP_THRESHOLD: usize = 1 << 18;

/// `out[m,n] = a[m,k] · b[k,n]` (row-major, overwriting `out`).
pub fn matmul_nn<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [E]| {
        out_row.fill(E::zero());
        for kk in 0..k {
            let a_ik = a[i * k + kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o = *o + a_ik * bv;
            }
        }
    };
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| row(i, out_row));
    } else {
        for (i, out_row) in out.chunks_mut(n).enumerate() {
            row(i, out_row);
        }
    }
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes; the summation order is fixed, so results stay deterministic.
fn dot8<E: Scalar>(a: &[E], b: &[E]) -> E {
    const LANES: usize = 8;
    let chunks = a.len() / LANES;
    let mut acc = [E::zero(); LANES];
    for c in 0..chunks {
        let ao = &a[c * LANES..(c + 1) * LANES];
        let bo = &b[c * LANES..(c + 1) * LANES];
        for lane in 0..LANES {
            acc[lane] = acc[lane] + ao[lane] * bo[lane];
        }
    }
    let mut s = E::zero();
    for lane in 0..LANES {
        s = s + acc[lane];
    }
    for i in chunks * LANES..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// `out[m,n] = a[m,k] · b[n,k]ᵀ` (both operands row-major).
pub fn matmul_nt<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [E]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *o = dot8(a_row, b_row);
        }
    };
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| row(i, out_row));
    } else {
        for (i, out_row) in out.chunks_mut(n).enumerate() {
            row(i, out_row);
        }
    }
}

pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv2d_dims<E: Scalar>(
    input: &TensorData<E>,
    kernel: &TensorData<E>,
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    if ishape.len() != 3 {
        return Err(Error::shape(
            "conv2d",
            format!("input must be C×H×W, got {ishape:?}"),
        ));
    }
    if kshape.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be C_out×C_in×k×k, got {kshape:?}"),
        ));
    }
    let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
    let (c_out, kc_in, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if kc_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c_in} channels (axis 0) but kernel expects {kc_in} (axis 1)"),
        ));
    }
    if kh != kw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be square, got {kh}×{kw} (axes 2, 3)"),
        ));
    }
    let k = kh;
    if k % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel size {k} must be odd")));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive".to_string()));
    }
    let span_h = (h + 2 * padding).checked_sub(k);
    let span_w = (w + 2 * padding).checked_sub(k);
    let (span_h, span_w) = match (span_h, span_w) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k}×{k} exceeds padded input {}×{} (axes 1, 2)",
                    h + 2 * padding, w + 2 * padding),
            ))
        }
    };
    if span_h % stride != 0 || span_w % stride != 0 {
        return Err(Error::shape(
            "conv2d",
            format!(
                "output size (dim + 2·{padding} − {k})/{stride} + 1 is not integral for input {h}×{w} (axes 1, 2)"
            ),
        ));
    }
    Ok(ConvDims {
        c_in,
        h,
        w,
        c_out,
        k,
        out_h: span_h / stride + 1,
        out_w: span_w / stride + 1,
    })
}

/// Lower a C×H×W input to a (C·k·k) × (out_h·out_w) patch matrix.
pub fn im2col<E: Scalar>(
    input: &[E],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<E> {
    let cols_w = out_h * out_w;
    let mut cols = vec![E::zero(); c_in * k * k * cols_w];
    for ci in 0..c_in {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * cols_w..][..cols_w];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * out_w..(oy + 1) * out_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a patch matrix back to C×H×W (adjoint of [`im2col`]).
#[allow(clippy::too_many_arguments)]
pub fn col2im<E: Scalar>(
    cols: &[E],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<E> {
    let cols_w = out_h * out_w;
    let mut input = vec![E::zero(); c_in * h * w];
    for ci in 0..c_in {
        let plane = &mut input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * cols_w..][..cols_w];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * out_w..(oy + 1) * out_w];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + s;
                        }
                    }
                }
            }
        }
    }
    input
}

pub(crate) fn conv2d_forward<E: Scalar>(
    input: &TensorData<E>,
    kernel: &TensorData<E>,
    stride: usize,
    padding: usize,
) -> Result<TensorData<E>> {
    let d = conv2d_dims(input, kernel, stride, padding)?;
    let cols = im2col(
        input.data(),
        d.c_in,
        d.h,
        d.w,
        d.k,
        stride,
        padding,
        d.out_h,
        d.out_w,
    );
    let mut out = vec![E::zero(); d.c_out * d.out_h * d.out_w];
    matmul_nn(
        d.c_out,
        d.c_in * d.k * d.k,
        d.out_h * d.out_w,
        kernel.data(),
        &cols,
        &mut out,
    );
    TensorData::new(vec![d.c_out, d.out_h, d.out_w], out)
}

/// Gradients of conv2d w.r.t. input and kernel. The patch matrix is
/// recomputed here rather than cached on the tape.
pub(crate) fn conv2d_backward<E: Scalar>(
    input: &TensorData<E>,
    kernel: &TensorData<E>,
    grad_out: &[E],
    stride: usize,
    padding: usize,
) -> (Vec<E>, Vec<E>) {
    let d = conv2d_dims(input, kernel, stride, padding).expect("checked at forward");
    let ckk = d.c_in * d.k * d.k;
    let cols_w = d.out_h * d.out_w;
    let cols = im2col(
        input.data(),
        d.c_in,
        d.h,
        d.w,
        d.k,
        stride,
        padding,
        d.out_h,
        d.out_w,
    );

    // dKernel[c_out, ckk] = grad_out[c_out, cols_w] · colsᵀ
    let mut d_kernel = vec![E::zero(); d.c_out * ckk];
    matmul_nt(d.c_out, cols_w, ckk, grad_out, &cols, &mut d_kernel);

    // dCols[ckk, cols_w] = kernelᵀ · grad_out; transpose the (small) kernel
    // matrix first so both matmul operands stay row-major.
    let kdata = kernel.data();
    let mut kt = vec![E::zero(); ckk * d.c_out];
    for co in 0..d.c_out {
        for j in 0..ckk {
            kt[j * d.c_out + co] = kdata[co * ckk + j];
        }
    }
    let mut d_cols = vec![E::zero(); ckk * cols_w];
    matmul_nn(ckk, d.c_out, cols_w, &kt, grad_out, &mut d_cols);
    let d_input = col2im(
        &d_cols,
        d.c_in,
        d.h,
        d.w,
        d.k,
        stride,
        padding,
        d.out_h,
        d.out_w,
    );
    (d_input, d_kernel)
}
