//! 2x2 stride-2 transposed convolution used by the decoder to double the
//! spatial resolution of single-time-slice feature maps.

use crate::elem::Elem;
use crate::ops::OpError;
use crate::tensor::{Dims5, Tensor5};

/// Transposed-convolution kernel: weights D x C x 1 x 2 x 2 (D output
/// channels, C input channels).
#[derive(Debug, Clone)]
pub struct Deconv2x2Kernel<T: Elem> {
    pub weights: Tensor5<T>,
    pub bias: Vec<T>,
}

impl<T: Elem> Deconv2x2Kernel<T> {
    pub fn new(weights: Tensor5<T>, bias: Vec<T>) -> Result<Self, OpError> {
        let d = weights.dims();
        if d.l != 1 || d.h != 2 || d.w != 2 {
            return Err(OpError::Shape(format!("deconv kernel must be D x C x 1 x 2 x 2, got {:?}", d)));
        }
        if bias.len() != d.n {
            return Err(OpError::Shape("bias length != output channels".into()));
        }
        Ok(Deconv2x2Kernel { weights, bias })
    }
}

/// Forward transposed conv. With kernel 2 and stride 2 every output pixel is
/// produced by exactly one input pixel:
/// out[d, 2i+di, 2j+dj] = sum_c w[d, c, di, dj] * x[c, i, j] + bias_d.
pub fn deconv2x2_forward<T: Elem>(
    x: &Tensor5<T>,
    w: &Tensor5<T>,
    bias: &[T],
) -> Result<Tensor5<T>, OpError> {
    let xd = x.dims();
    let wd = w.dims();
    if xd.l != 1 {
        return Err(OpError::Shape(format!("deconv2x2 requires l = 1, got {}", xd.l)));
    }
    if xd.c != wd.c {
        return Err(OpError::Shape(format!("input has {} channels, kernel expects {}", xd.c, wd.c)));
    }
    let d_out = wd.n;
    let mut out = Tensor5::zeros(Dims5::new(xd.n, d_out, 1, 2 * xd.h, 2 * xd.w))?;
    let wo = 2 * xd.w;
    for n in 0..xd.n {
        for d in 0..d_out {
            let b = bias[d];
            // bias first, then accumulate channel contributions
            out.frame_mut(n, d, 0).fill(b);
            for c in 0..xd.c {
                let taps = [
                    w.at(d, c, 0, 0, 0),
                    w.at(d, c, 0, 0, 1),
                    w.at(d, c, 0, 1, 0),
                    w.at(d, c, 0, 1, 1),
                ];
                let src = x.frame(n, c, 0).to_vec();
                let dst = out.frame_mut(n, d, 0);
                for i in 0..xd.h {
                    for j in 0..xd.w {
                        let v = src[i * xd.w + j];
                        dst[(2 * i) * wo + 2 * j].add_assign(taps[0].mul(v));
                        dst[(2 * i) * wo + 2 * j + 1].add_assign(taps[1].mul(v));
                        dst[(2 * i + 1) * wo + 2 * j].add_assign(taps[2].mul(v));
                        dst[(2 * i + 1) * wo + 2 * j + 1].add_assign(taps[3].mul(v));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn deconv2x2<T: Elem>(x: &Tensor5<T>, k: &Deconv2x2Kernel<T>) -> Result<Tensor5<T>, OpError> {
    deconv2x2_forward(x, &k.weights, &k.bias)
}

/// Backward of the transposed conv: the input gradient is the matching
/// forward 2x2 stride-2 convolution of the output gradient.
pub fn deconv2x2_backward<T: Elem>(
    x: &Tensor5<T>,
    w: &Tensor5<T>,
    dout: &Tensor5<T>,
) -> Result<(Tensor5<T>, Tensor5<T>, Vec<T>), OpError> {
    let xd = x.dims();
    let wd = w.dims();
    let od = dout.dims();
    if (od.n, od.c, od.l, od.h, od.w) != (xd.n, wd.n, 1, 2 * xd.h, 2 * xd.w) {
        return Err(OpError::Shape("deconv gradient dims mismatch".into()));
    }
    let mut dx = Tensor5::zeros(xd)?;
    let mut dw: Tensor5<T> = Tensor5::zeros(wd)?;
    let mut db = vec![T::ZERO; wd.n];
    let wo = od.w;
    for n in 0..xd.n {
        for d in 0..wd.n {
            let g = dout.frame(n, d, 0);
            for &v in g {
                db[d].add_assign(v);
            }
            for c in 0..xd.c {
                let src = x.frame(n, c, 0).to_vec();
                let mut dtaps = [T::ZERO; 4];
                let taps = [
                    w.at(d, c, 0, 0, 0),
                    w.at(d, c, 0, 0, 1),
                    w.at(d, c, 0, 1, 0),
                    w.at(d, c, 0, 1, 1),
                ];
                {
                    let dxf: &mut [T] = dx.frame_mut(n, c, 0);
                    for i in 0..xd.h {
                        for j in 0..xd.w {
                            let g00 = g[(2 * i) * wo + 2 * j];
                            let g01 = g[(2 * i) * wo + 2 * j + 1];
                            let g10 = g[(2 * i + 1) * wo + 2 * j];
                            let g11 = g[(2 * i + 1) * wo + 2 * j + 1];
                            let v = src[i * xd.w + j];
                            dxf[i * xd.w + j].add_assign(
                                taps[0].mul(g00).add(taps[1].mul(g01)).add(taps[2].mul(g10)).add(taps[3].mul(g11)),
                            );
                            dtaps[0].add_assign(g00.mul(v));
                            dtaps[1].add_assign(g01.mul(v));
                            dtaps[2].add_assign(g10.mul(v));
                            dtaps[3].add_assign(g11.mul(v));
                        }
                    }
                }
                for (t, &dv) in dtaps.iter().enumerate() {
                    dw.at_mut(d, c, 0, t / 2, t % 2).add_assign(dv);
                }
            }
        }
    }
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(dims: Dims5, rng: &mut ChaCha8Rng) -> Tensor5<f64> {
        let data = (0..dims.count().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor5::from_vec(dims, data).unwrap()
    }

    #[test]
    fn single_pixel_spread() {
        let x = Tensor5::from_vec(Dims5::new(1, 1, 1, 1, 1), vec![3.5f64]).unwrap();
        let w = Tensor5::new(Dims5::new(1, 1, 1, 2, 2), 1.0).unwrap();
        let k = Deconv2x2Kernel::new(w, vec![0.0]).unwrap();
        let y = deconv2x2(&x, &k).unwrap();
        assert_eq!(y.data(), &[3.5; 4]);
    }

    #[test]
    fn dimension_doubling() {
        let x = Tensor5::<f64>::new(Dims5::new(1, 2, 1, 8, 10), 0.0).unwrap();
        let w = Tensor5::new(Dims5::new(3, 2, 1, 2, 2), 0.0).unwrap();
        let k = Deconv2x2Kernel::new(w, vec![0.0; 3]).unwrap();
        let y = deconv2x2(&x, &k).unwrap();
        assert_eq!((y.dims().h, y.dims().w), (16, 20));
    }

    #[test]
    fn rejects_multi_slice_input() {
        let x = Tensor5::<f64>::new(Dims5::new(1, 1, 2, 4, 4), 0.0).unwrap();
        let w = Tensor5::new(Dims5::new(1, 1, 1, 2, 2), 0.0).unwrap();
        let k = Deconv2x2Kernel::new(w, vec![0.0]).unwrap();
        assert!(matches!(deconv2x2(&x, &k), Err(OpError::Shape(_))));
    }

    /// Transpose relationship: <deconv(g), x_out> = <g, conv(x_out)> where
    /// conv is the forward 2x2 stride-2 convolution with the same weights.
    #[test]
    fn transposed_conv_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_tensor(Dims5::new(1, 3, 1, 4, 5), &mut rng);
        let probe = random_tensor(Dims5::new(1, 2, 1, 8, 10), &mut rng);
        let w = random_tensor(Dims5::new(2, 3, 1, 2, 2), &mut rng);
        // deconv maps 3 -> 2 channels here; the adjoint conv maps 2 -> 3.
        let up = deconv2x2_forward(&g, &w, &[0.0, 0.0]).unwrap();
        // naive forward conv: y[d,i,j] = sum_c w[d,c,di,dj] probe[c,2i+di,2j+dj]
        let mut inner_conv = 0.0;
        for d in 0..3 {
            for i in 0..4 {
                for j in 0..5 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for di in 0..2 {
                            for dj in 0..2 {
                                // weights indexed as (out=c_of_up? ) match deconv orientation:
                                // deconv weight w[dout, cin, di, dj] with cin = g channels.
                                acc += w.at(c, d, 0, di, dj) * probe.at(0, c, 0, 2 * i + di, 2 * j + dj);
                            }
                        }
                    }
                    inner_conv += g.at(0, d, 0, i, j) * acc;
                }
            }
        }
        let inner_deconv: f64 = up.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        assert!((inner_deconv - inner_conv).abs() < 1e-6);
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random_tensor(Dims5::new(1, 2, 1, 3, 3), &mut rng);
        let mut w = random_tensor(Dims5::new(2, 2, 1, 2, 2), &mut rng);
        let bias = vec![0.0, 0.0];
        let y = deconv2x2_forward(&x, &w, &bias).unwrap();
        let dout = Tensor5::new(y.dims(), 1.0).unwrap();
        let (dx, dw, _db) = deconv2x2_backward(&x, &w, &dout).unwrap();
        let eps = 1e-6;
        for idx in [0usize, 5, 11] {
            let orig = w.data()[idx];
            w.data_mut()[idx] = orig + eps;
            let lp: f64 = deconv2x2_forward(&x, &w, &bias).unwrap().data().iter().sum();
            w.data_mut()[idx] = orig - eps;
            let lm: f64 = deconv2x2_forward(&x, &w, &bias).unwrap().data().iter().sum();
            w.data_mut()[idx] = orig;
            assert!((dw.data()[idx] - (lp - lm) / (2.0 * eps)).abs() < 1e-5);
        }
        let mut x2 = x.clone();
        let orig = x2.data()[4];
        x2.data_mut()[4] = orig + eps;
        let lp: f64 = deconv2x2_forward(&x2, &w, &bias).unwrap().data().iter().sum();
        x2.data_mut()[4] = orig - eps;
        let lm: f64 = deconv2x2_forward(&x2, &w, &bias).unwrap().data().iter().sum();
        assert!((dx.data()[4] - (lp - lm) / (2.0 * eps)).abs() < 1e-5);
    }
}
