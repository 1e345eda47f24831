use rand::Rng;

use super::{Real, Tensor};

/// Threshold used by the CharCNN activations.
pub const DEFAULT_THRESHOLD: f64 = 1e-6;

/// `y = x` where `x > theta`, else 0.
pub fn thresholded_relu<F: Real>(x: &Tensor<F>, theta: F) -> Tensor<F> {
    x.map(|v| if v > theta { v } else { F::zero() })
}

/// Gradient through [`thresholded_relu`], given the layer input.
pub fn thresholded_relu_backward<F: Real>(x: &Tensor<F>, dy: &mut Tensor<F>, theta: F) {
    for (g, &v) in dy.data_mut().iter_mut().zip(x.data()) {
        if v <= theta {
            *g = F::zero();
        }
    }
}

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::zero()))
}

pub fn relu_backward<F: Real>(x: &Tensor<F>, dy: &mut Tensor<F>) {
    thresholded_relu_backward(x, dy, F::zero())
}

#[inline]
pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    // Split by sign so exp never overflows.
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid_scalar)
}

pub fn tanh<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.tanh())
}

/// Gradient through tanh given its output `y`.
pub fn tanh_backward<F: Real>(y: &Tensor<F>, dy: &mut Tensor<F>) {
    for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        *g *= F::one() - v * v;
    }
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<F: Real>(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<F> {
    let keep = F::lit(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep }).collect()
}
