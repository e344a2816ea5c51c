//! Retrospective convolution: a kernel of temporal extent 2 whose first half
//! correlates with one historical frame and whose second half always
//! correlates with the current (last) frame, producing one inter-frame
//! response per historical frame. Dilation > 1 gives the atrous variant;
//! spatial zero padding of dilation*(k-1)/2 preserves H x W.

use crate::elem::Elem;
use crate::ops::conv::{gather_plane_dilated, ConvGeom};
use crate::ops::OpError;
use crate::tensor::{Dims5, Tensor5};

/// Retrospective convolution kernel: weights D x C x 2 x k x k.
/// Temporal index 0 is the historical half, 1 the current-frame half.
#[derive(Debug, Clone)]
pub struct RetroKernel<T: Elem> {
    pub weights: Tensor5<T>,
    pub bias: Vec<T>,
    pub dilation: usize,
}

impl<T: Elem> RetroKernel<T> {
    pub fn new(weights: Tensor5<T>, bias: Vec<T>, dilation: usize) -> Result<Self, OpError> {
        let wd = weights.dims();
        if wd.l != 2 {
            return Err(OpError::Shape(format!("retro kernel temporal extent must be 2, got {}", wd.l)));
        }
        if wd.h != wd.w || wd.h % 2 == 0 {
            return Err(OpError::Shape("retro kernel spatial size must be odd and square".into()));
        }
        if dilation == 0 {
            return Err(OpError::Config("dilation must be >= 1".into()));
        }
        if bias.len() != wd.n {
            return Err(OpError::Shape(format!("bias length {} != output channels {}", bias.len(), wd.n)));
        }
        Ok(RetroKernel { weights, bias, dilation })
    }

    /// Spatial padding that keeps H x W fixed: dilation * (k - 1) / 2.
    pub fn padding(&self) -> usize {
        self.dilation * (self.weights.dims().h - 1) / 2
    }

    /// Effective field of view k + (k - 1)(dilation - 1).
    pub fn field_of_view(&self) -> usize {
        let k = self.weights.dims().h;
        k + (k - 1) * (self.dilation - 1)
    }
}

fn retro_geometry<T: Elem>(
    x: &Tensor5<T>,
    w: &Tensor5<T>,
    dilation: usize,
) -> Result<(ConvGeom, usize), OpError> {
    let xd = x.dims();
    if xd.l < 2 {
        return Err(OpError::TemporalLength(format!(
            "retrospective convolution needs L >= 2, got {}",
            xd.l
        )));
    }
    let wd = w.dims();
    if xd.c != wd.c {
        return Err(OpError::Shape(format!("input has {} channels, kernel expects {}", xd.c, wd.c)));
    }
    let pad = dilation * (wd.h - 1) / 2;
    // Geometry of the dilated spatial stencil (h_out = h, w_out = w).
    let g = ConvGeom {
        c: wd.c,
        d: wd.n,
        lk: 2,
        kh: wd.h,
        kw: wd.w,
        l_out: xd.l - 1,
        h_out: xd.h,
        w_out: xd.w,
    };
    Ok((g, pad))
}

/// Gather the 2-frame patch matrix for output slice l_out: rows ordered
/// (c, t, dh, dw) with t = 0 sampling frame l_out and t = 1 the last frame.
#[allow(clippy::too_many_arguments)]
fn im2col_retro<T: Elem>(
    x: &Tensor5<T>,
    n: usize,
    l_out: usize,
    g: &ConvGeom,
    pad: usize,
    dilation: usize,
    col: &mut [T],
) {
    let xd = x.dims();
    let p = g.h_out * g.w_out;
    let mut row = 0usize;
    for c in 0..g.c {
        for t in 0..2usize {
            let l_in = if t == 0 { l_out } else { xd.l - 1 };
            let frame = x.frame(n, c, l_in);
            for dh in 0..g.kh {
                for dw in 0..g.kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    gather_plane_dilated(frame, xd.h, xd.w, g, (1, 1), (pad, pad), dh, dw, dilation, dst);
                    row += 1;
                }
            }
        }
    }
}

fn col2im_retro<T: Elem>(
    dcol: &[T],
    n: usize,
    l_out: usize,
    g: &ConvGeom,
    pad: usize,
    dilation: usize,
    dx: &mut Tensor5<T>,
) {
    let xd = dx.dims();
    let p = g.h_out * g.w_out;
    let mut row = 0usize;
    for c in 0..g.c {
        for t in 0..2usize {
            let l_in = if t == 0 { l_out } else { xd.l - 1 };
            let frame = dx.frame_mut(n, c, l_in);
            for dh in 0..g.kh {
                for dw in 0..g.kw {
                    let src = &dcol[row * p..(row + 1) * p];
                    for i_out in 0..g.h_out {
                        let i_in = (i_out + dh * dilation) as isize - pad as isize;
                        if i_in < 0 || i_in >= xd.h as isize {
                            continue;
                        }
                        for j_out in 0..g.w_out {
                            let j_in = (j_out + dw * dilation) as isize - pad as isize;
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

/// Forward retrospective convolution (dilation 1) / atrous retrospective
/// convolution (dilation > 1). Output temporal length is L - 1; no
/// activation is applied.
pub fn retro_conv_forward<T: Elem>(
    x: &Tensor5<T>,
    w: &Tensor5<T>,
    bias: &[T],
    dilation: usize,
) -> Result<Tensor5<T>, OpError> {
    let (g, pad) = retro_geometry(x, w, dilation)?;
    let xd = x.dims();
    let k = g.c * 2 * g.kh * g.kw;
    let p = g.h_out * g.w_out;
    let mut out = Tensor5::zeros(Dims5::new(xd.n, g.d, g.l_out, g.h_out, g.w_out))?;
    let mut col = vec![T::ZERO; k * p];
    let mut slice = vec![T::ZERO; g.d * p];
    for n in 0..xd.n {
        for l_out in 0..g.l_out {
            im2col_retro(x, n, l_out, &g, pad, dilation, &mut col);
            T::gemm(g.d, k, p, T::ONE, w.data(), &col, T::ZERO, &mut slice);
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

/// Apply a [`RetroKernel`] (atrous when dilation > 1).
pub fn retro_conv<T: Elem>(x: &Tensor5<T>, k: &RetroKernel<T>) -> Result<Tensor5<T>, OpError> {
    retro_conv_forward(x, &k.weights, &k.bias, k.dilation)
}

pub struct RetroBackward<T: Elem> {
    pub dx: Tensor5<T>,
    pub dw: Tensor5<T>,
    pub db: Vec<T>,
}

/// Reverse-mode gradients. The w1-half gradient of the input is scattered to
/// the current frame, accumulated over all L - 1 output slices.
pub fn retro_conv_backward<T: Elem>(
    x: &Tensor5<T>,
    w: &Tensor5<T>,
    dout: &Tensor5<T>,
    dilation: usize,
    need_dx: bool,
) -> Result<RetroBackward<T>, OpError> {
    let (g, pad) = retro_geometry(x, w, dilation)?;
    let xd = x.dims();
    let od = dout.dims();
    if (od.n, od.c, od.l, od.h, od.w) != (xd.n, g.d, g.l_out, g.h_out, g.w_out) {
        return Err(OpError::Shape("dout dims do not match retro_conv output".into()));
    }
    let k = g.c * 2 * g.kh * g.kw;
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
            im2col_retro(x, n, l_out, &g, pad, dilation, &mut col);
            T::gemm_strided(g.d, p, k, T::ONE, &dslice, p as isize, 1, &col, 1, p as isize, T::ONE, dw.data_mut());
            if need_dx {
                T::gemm_strided(k, g.d, p, T::ONE, w.data(), 1, k as isize, &dslice, p as isize, 1, T::ZERO, &mut dcol);
                col2im_retro(&dcol, n, l_out, &g, pad, dilation, &mut dx);
            }
        }
    }
    Ok(RetroBackward { dx, dw, db })
}
