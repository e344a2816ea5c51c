//! Pointwise nonlinearities.

use crate::elem::Elem;
use crate::tensor::Tensor5;

pub fn relu<T: Elem>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// ReLU gradient gates by sign of the cached input; the subgradient at 0 is 0.
pub fn relu_backward<T: Elem>(x: &Tensor5<T>, dout: &Tensor5<T>) -> Tensor5<T> {
    debug_assert_eq!(x.dims(), dout.dims());
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| if v > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor5::from_vec(x.dims(), data).unwrap()
}

pub fn sigmoid<T: Elem>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map(|v| T::ONE.div(T::ONE.add(v.neg().exp())))
}

/// Sigmoid gradient from the cached output: s * (1 - s).
pub fn sigmoid_backward<T: Elem>(y: &Tensor5<T>, dout: &Tensor5<T>) -> Tensor5<T> {
    debug_assert_eq!(y.dims(), dout.dims());
    let data = y
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&s, &g)| g.mul(s.mul(T::ONE.sub(s))))
        .collect();
    Tensor5::from_vec(y.dims(), data).unwrap()
}
