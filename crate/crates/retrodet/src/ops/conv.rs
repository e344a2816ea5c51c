//! 3D convolution via im2col + GEMM.
//!
//! Temporal behavior is "valid" (output l = l_in + 2*pad_l - l_k + 1, with
//! pad_l = 0 by default); spatial behavior is zero-padded with configurable
//! stride. A 1 x k x k kernel realizes a spatial convolution shared across
//! frames.

use crate::elem::Elem;
use crate::ops::OpError;
use crate::tensor::{Dims5, Tensor5};

/// 3D convolution kernel: weights D x C x l_k x h_k x w_k, one bias per
/// output channel.
#[derive(Debug, Clone)]
pub struct Conv3Kernel<T: Elem> {
    pub weights: Tensor5<T>,
    pub bias: Vec<T>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    /// Temporal zero padding; 0 keeps the op strictly valid along time.
    pub pad_l: usize,
}

impl<T: Elem> Conv3Kernel<T> {
    pub fn new(weights: Tensor5<T>, bias: Vec<T>, stride: (usize, usize), pad: (usize, usize)) -> Result<Self, OpError> {
        if bias.len() != weights.dims().n {
            return Err(OpError::Shape(format!(
                "bias length {} != output channels {}",
                bias.len(),
                weights.dims().n
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(OpError::Config("stride must be >= 1".into()));
        }
        Ok(Conv3Kernel { weights, bias, stride, pad, pad_l: 0 })
    }
}

pub(crate) struct ConvGeom {
    pub c: usize,
    pub d: usize,
    pub lk: usize,
    pub kh: usize,
    pub kw: usize,
    pub l_out: usize,
    pub h_out: usize,
    pub w_out: usize,
}

pub(crate) fn conv_geometry<T: Elem>(
    x: &Tensor5<T>,
    w: &Tensor5<T>,
    stride: (usize, usize),
    pad: (usize, usize),
    pad_l: usize,
) -> Result<ConvGeom, OpError> {
    let xd = x.dims();
    let wd = w.dims();
    let (d, c, lk, kh, kw) = (wd.n, wd.c, wd.l, wd.h, wd.w);
    if xd.c != c {
        return Err(OpError::Shape(format!("input has {} channels, kernel expects {c}", xd.c)));
    }
    if xd.l + 2 * pad_l < lk {
        return Err(OpError::Shape(format!(
            "temporal kernel {lk} longer than padded input length {}",
            xd.l + 2 * pad_l
        )));
    }
    if xd.h + 2 * pad.0 < kh || xd.w + 2 * pad.1 < kw {
        return Err(OpError::Shape("spatial kernel larger than padded input".into()));
    }
    Ok(ConvGeom {
        c,
        d,
        lk,
        kh,
        kw,
        l_out: xd.l + 2 * pad_l - lk + 1,
        h_out: (xd.h + 2 * pad.0 - kh) / stride.0 + 1,
        w_out: (xd.w + 2 * pad.1 - kw) / stride.1 + 1,
    })
}

/// Gather the patch matrix (C*lk*kh*kw rows x h_out*w_out cols) for one
/// (n, l_out) position. Out-of-range taps read as zero.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Elem>(
    x: &Tensor5<T>,
    n: usize,
    l_out: usize,
    g: &ConvGeom,
    stride: (usize, usize),
    pad: (usize, usize),
    pad_l: usize,
    col: &mut [T],
) {
    let xd = x.dims();
    let p = g.h_out * g.w_out;
    let mut row = 0usize;
    for c in 0..g.c {
        for t in 0..g.lk {
            let l_in = (l_out + t) as isize - pad_l as isize;
            if l_in < 0 || l_in >= xd.l as isize {
                col[row * p..(row + g.kh * g.kw) * p].fill(T::ZERO);
                row += g.kh * g.kw;
                continue;
            }
            let frame = x.frame(n, c, l_in as usize);
            for dh in 0..g.kh {
                for dw in 0..g.kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    gather_plane(frame, xd.h, xd.w, g, stride, pad, dh, dw, dst);
                    row += 1;
                }
            }
        }
    }
}

/// One im2col row: input plane sampled at (i*sh - ph + dh*dil, j*sw - pw + dw*dil).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gather_plane<T: Elem>(
    frame: &[T],
    h: usize,
    w: usize,
    g: &ConvGeom,
    stride: (usize, usize),
    pad: (usize, usize),
    dh: usize,
    dw: usize,
    dst: &mut [T],
) {
    gather_plane_dilated(frame, h, w, g, stride, pad, dh, dw, 1, dst);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gather_plane_dilated<T: Elem>(
    frame: &[T],
    h: usize,
    w: usize,
    g: &ConvGeom,
    stride: (usize, usize),
    pad: (usize, usize),
    dh: usize,
    dw: usize,
    dilation: usize,
    dst: &mut [T],
) {
    for i_out in 0..g.h_out {
        let i_in = (i_out * stride.0 + dh * dilation) as isize - pad.0 as isize;
        let out_row = &mut dst[i_out * g.w_out..(i_out + 1) * g.w_out];
        if i_in < 0 || i_in >= h as isize {
            out_row.fill(T::ZERO);
            continue;
        }
        let src_row = &frame[i_in as usize * w..(i_in as usize + 1) * w];
        for (j_out, slot) in out_row.iter_mut().enumerate() {
            let j_in = (j_out * stride.1 + dw * dilation) as isize - pad.1 as isize;
            *slot = if j_in < 0 || j_in >= w as isize { T::ZERO } else { src_row[j_in as usize] };
        }
    }
}

/// Scatter-add the column-gradient matrix back into the input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Elem>(
    dcol: &[T],
    n: usize,
    l_out: usize,
    g: &ConvGeom,
    stride: (usize, usize),
    pad: (usize, usize),
    pad_l: usize,
    dx: &mut Tensor5<T>,
) {
    let xd = dx.dims();
    let p = g.h_out * g.w_out;
    let mut row = 0usize;
    for c in 0..g.c {
        for t in 0..g.lk {
            let l_in = (l_out + t) as isize - pad_l as isize;
            if l_in < 0 || l_in >= xd.l as isize {
                row += g.kh * g.kw;
                continue;
            }
            let frame = dx.frame_mut(n, c, l_in as usize);
            for dh in 0..g.kh {
                for dw in 0..g.kw {
                    let src = &dcol[row * p..(row + 1) * p];
                    for i_out in 0..g.h_out {
                        let i_in = (i_out * stride.0 + dh) as isize - pad.0 as isize;
                        if i_in < 0 || i_in >= xd.h as isize {
                            continue;
                        }
                        for j_out in 0..g.w_out {
                            let j_in = (j_out * stride.1 + dw) as isize - pad.1 as isize;
                            if j_in < 0 || j_in >= xd.w as isize {
                                continue;
                            }
                            frame[i_in as usize * xd.w + j_in as usize]
                                .add_assign(src[i_out * g.w_out + j_out]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Forward 3D convolution with explicit weights and bias.
pub fn conv3d_forward<T: Elem>(
    x: &Tensor5<T>,
    w: &Tensor5<T>,
    bias: &[T],
    stride: (usize, usize),
    pad: (usize, usize),
    pad_l: usize,
) -> Result<Tensor5<T>, OpError> {
    let g = conv_geometry(x, w, stride, pad, pad_l)?;
    let xd = x.dims();
    let k = g.c * g.lk * g.kh * g.kw;
    let p = g.h_out * g.w_out;
    let mut out = Tensor5::zeros(Dims5::new(xd.n, g.d, g.l_out, g.h_out, g.w_out))?;
    let mut col = vec![T::ZERO; k * p];
    for n in 0..xd.n {
        for l_out in 0..g.l_out {
            im2col(x, n, l_out, &g, stride, pad, pad_l, &mut col);
            let dst_off = out.offset(n, 0, l_out, 0, 0);
            // Output channels are not contiguous for one (n, l_out); gemm into
            // a scratch then copy per channel.
            let mut slice = vec![T::ZERO; g.d * p];
            T::gemm(g.d, k, p, T::ONE, w.data(), &col, T::ZERO, &mut slice);
            let _ = dst_off;
            for d in 0..g.d {
                let b = bias[d];
                let dst = out.frame_mut(n, d, l_out);
                for (o, &v) in dst.iter_mut().zip(&slice[d * p..(d + 1) * p]) {
                    *o = v.add(b);
                }
            }
        }
    }
    Ok(out)
}

/// Apply a [`Conv3Kernel`].
pub fn conv3d<T: Elem>(x: &Tensor5<T>, k: &Conv3Kernel<T>) -> Result<Tensor5<T>, OpError> {
    conv3d_forward(x, &k.weights, &k.bias, k.stride, k.pad, k.pad_l)
}

pub struct Conv3Backward<T: Elem> {
    pub dx: Tensor5<T>,
    pub dw: Tensor5<T>,
    pub db: Vec<T>,
}

/// Reverse-mode gradients of [`conv3d_forward`] for input, weights and bias.
pub fn conv3d_backward<T: Elem>(
    x: &Tensor5<T>,
    w: &Tensor5<T>,
    dout: &Tensor5<T>,
    stride: (usize, usize),
    pad: (usize, usize),
    pad_l: usize,
    need_dx: bool,
) -> Result<Conv3Backward<T>, OpError> {
    let g = conv_geometry(x, w, stride, pad, pad_l)?;
    let xd = x.dims();
    let od = dout.dims();
    if (od.n, od.c, od.l, od.h, od.w) != (xd.n, g.d, g.l_out, g.h_out, g.w_out) {
        return Err(OpError::Shape("dout dims do not match conv output".into()));
    }
    let k = g.c * g.lk * g.kh * g.kw;
    let p = g.h_out * g.w_out;
    let mut dx = Tensor5::zeros(xd)?;
    let mut dw = Tensor5::zeros(w.dims())?;
    let mut db = vec![T::ZERO; g.d];
    let mut col = vec![T::ZERO; k * p];
    let mut dcol = vec![T::ZERO; k * p];
    let mut dslice = vec![T::ZERO; g.d * p];
    for n in 0..xd.n {
        for l_out in 0..g.l_out {
            for d in 0..g.d {
                let go = dout.frame(n, d, l_out);
                dslice[d * p..(d + 1) * p].copy_from_slice(go);
                for &v in go {
                    db[d].add_assign(v);
                }
            }
            im2col(x, n, l_out, &g, stride, pad, pad_l, &mut col);
            // dW += dOut (D x P) * col^T (P x K)
            T::gemm_strided(g.d, p, k, T::ONE, &dslice, p as isize, 1, &col, 1, p as isize, T::ONE, dw.data_mut());
            if need_dx {
                // dCol = W^T (K x D) * dOut (D x P)
                T::gemm_strided(k, g.d, p, T::ONE, w.data(), 1, k as isize, &dslice, p as isize, 1, T::ZERO, &mut dcol);
                col2im(&dcol, n, l_out, &g, stride, pad, pad_l, &mut dx);
            }
        }
    }
    Ok(Conv3Backward { dx, dw, db })
}
