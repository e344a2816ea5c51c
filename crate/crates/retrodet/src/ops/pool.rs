//! Full-length temporal average pooling and 2x2 stride-2 spatial max pooling.

use crate::elem::Elem;
use crate::ops::OpError;
use crate::tensor::{Dims5, Tensor5};

/// Mean over the whole time axis; output temporal length is 1.
pub fn temporal_avg_pool<T: Elem>(x: &Tensor5<T>) -> Result<Tensor5<T>, OpError> {
    let d = x.dims();
    let mut out = Tensor5::zeros(Dims5::new(d.n, d.c, 1, d.h, d.w))?;
    let inv = T::from_f64(1.0 / d.l as f64);
    for n in 0..d.n {
        for c in 0..d.c {
            let dst: &mut [T] = out.frame_mut(n, c, 0);
            for l in 0..d.l {
                let start = (((n * d.c + c) * d.l + l) * d.h) * d.w;
                let src = &x.data()[start..start + d.h * d.w];
                for (o, &v) in dst.iter_mut().zip(src) {
                    o.add_assign(v);
                }
            }
            for o in dst.iter_mut() {
                *o = o.mul(inv);
            }
        }
    }
    Ok(out)
}

/// Backward of temporal average pooling: gradient spread uniformly over the
/// input's time axis, scaled by 1/l_in.
pub fn temporal_avg_pool_backward<T: Elem>(dout: &Tensor5<T>, l_in: usize) -> Result<Tensor5<T>, OpError> {
    let d = dout.dims();
    if d.l != 1 {
        return Err(OpError::Shape("temporal pool gradient must have l = 1".into()));
    }
    let mut dx = Tensor5::zeros(Dims5::new(d.n, d.c, l_in, d.h, d.w))?;
    let inv = T::from_f64(1.0 / l_in as f64);
    for n in 0..d.n {
        for c in 0..d.c {
            let src: Vec<T> = dout.frame(n, c, 0).iter().map(|&v| v.mul(inv)).collect();
            for l in 0..l_in {
                dx.frame_mut(n, c, l).copy_from_slice(&src);
            }
        }
    }
    Ok(dx)
}

/// 2x2 stride-2 spatial max per (n, c, l). Requires even spatial dims.
pub fn maxpool2<T: Elem>(x: &Tensor5<T>) -> Result<Tensor5<T>, OpError> {
    let d = x.dims();
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(OpError::Shape(format!("maxpool2 requires even spatial dims, got {}x{}", d.h, d.w)));
    }
    let (ho, wo) = (d.h / 2, d.w / 2);
    let mut out = Tensor5::zeros(Dims5::new(d.n, d.c, d.l, ho, wo))?;
    for n in 0..d.n {
        for c in 0..d.c {
            for l in 0..d.l {
                let src = x.frame(n, c, l);
                let dst = out.frame_mut(n, c, l);
                for i in 0..ho {
                    for j in 0..wo {
                        let a = src[(2 * i) * d.w + 2 * j];
                        let b = src[(2 * i) * d.w + 2 * j + 1];
                        let e = src[(2 * i + 1) * d.w + 2 * j];
                        let f = src[(2 * i + 1) * d.w + 2 * j + 1];
                        let mut m = a;
                        for v in [b, e, f] {
                            if v > m {
                                m = v;
                            }
                        }
                        dst[i * wo + j] = m;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward of maxpool2: gradient routed to the argmax of each 2x2 block,
/// first element winning ties (scan order a, b, e, f).
pub fn maxpool2_backward<T: Elem>(x: &Tensor5<T>, dout: &Tensor5<T>) -> Result<Tensor5<T>, OpError> {
    let d = x.dims();
    let od = dout.dims();
    if od.h != d.h / 2 || od.w != d.w / 2 || od.n != d.n || od.c != d.c || od.l != d.l {
        return Err(OpError::Shape("maxpool2 gradient dims mismatch".into()));
    }
    let mut dx = Tensor5::zeros(d)?;
    for n in 0..d.n {
        for c in 0..d.c {
            for l in 0..d.l {
                let src = x.frame(n, c, l);
                let g = dout.frame(n, c, l).to_vec();
                let dst: &mut [T] = dx.frame_mut(n, c, l);
                for i in 0..od.h {
                    for j in 0..od.w {
                        let offsets = [
                            (2 * i) * d.w + 2 * j,
                            (2 * i) * d.w + 2 * j + 1,
                            (2 * i + 1) * d.w + 2 * j,
                            (2 * i + 1) * d.w + 2 * j + 1,
                        ];
                        let mut best = offsets[0];
                        for &o in &offsets[1..] {
                            if src[o] > src[best] {
                                best = o;
                            }
                        }
                        dst[best].add_assign(g[i * od.w + j]);
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn temporal_pool_identity_when_l1() {
        let x = Tensor5::from_vec(Dims5::new(1, 1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = temporal_avg_pool(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn temporal_pool_mean_of_constants() {
        let mut x = Tensor5::<f64>::new(Dims5::new(1, 1, 2, 3, 3), 1.0).unwrap();
        x.frame_mut(0, 0, 1).fill(3.0);
        let y = temporal_avg_pool(&x).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn temporal_pool_matches_naive_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let dims = Dims5::new(2, 3, 5, 4, 4);
        let data: Vec<f64> = (0..dims.count().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor5::from_vec(dims, data).unwrap();
        let y = temporal_avg_pool(&x).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..4 {
                    for j in 0..4 {
                        let mut acc = 0.0;
                        for l in 0..5 {
                            acc += x.at(n, c, l, i, j);
                        }
                        assert!((y.at(n, c, 0, i, j) - acc / 5.0).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn temporal_pool_backward_uniform() {
        let dout = Tensor5::<f64>::new(Dims5::new(1, 1, 1, 2, 2), 1.0).unwrap();
        let dx = temporal_avg_pool_backward(&dout, 2).unwrap();
        assert!(dx.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn maxpool_block() {
        let x = Tensor5::from_vec(Dims5::new(1, 1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let x = Tensor5::<f64>::new(Dims5::new(1, 1, 1, 3, 4), 0.0).unwrap();
        assert!(matches!(maxpool2(&x), Err(OpError::Shape(_))));
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = Tensor5::from_vec(Dims5::new(1, 1, 1, 2, 4), vec![1.0f64, 2.0, 5.0, 5.0, 3.0, 4.0, 5.0, 5.0]).unwrap();
        let dout = Tensor5::from_vec(Dims5::new(1, 1, 1, 1, 2), vec![1.0f64, 1.0]).unwrap();
        let dx = maxpool2_backward(&x, &dout).unwrap();
        // left block max is 4.0 at (1,1); right block ties resolve to the
        // first-scanned element (0,2).
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
