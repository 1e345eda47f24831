//! Dense numeric core.
//!
//! Every layer is a pair of free functions: a forward pass that returns its
//! output plus whatever it needs to remember, and a backward pass that takes
//! the upstream gradient and accumulates parameter gradients into a
//! [`ParamSet`] of the same layout as the parameters. Everything is generic
//! over [`Real`] so the same code runs in `f32` for training and in `f64` for
//! finite-difference checks.

mod activation;
mod conv;
pub mod gradcheck;
mod head;
mod optim;
mod pool;
mod recurrent;
mod se;
mod tensor;

pub use activation::{
    dropout_mask, relu, relu_backward, sigmoid, sigmoid_scalar, tanh, tanh_backward, thresholded_relu,
    thresholded_relu_backward, DEFAULT_THRESHOLD,
};
pub use conv::{
    conv1d_backward, conv1d_forward, embed_backward, embed_conv_backward, embed_conv_finish, embed_conv_forward,
    embed_conv_table, embed_forward,
};
pub use head::{cross_entropy, dense_backward, dense_forward, softmax, softmax_cross_entropy_grad, LOG_EPS};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool1d, maxpool1d_backward};
pub use recurrent::{
    bilstm_layer, gru_backward, gru_forward, gru_layer, input_projection, input_projection_backward,
    lstm_backward, lstm_forward, GruCache, LstmCache,
};
pub(crate) use recurrent::concat_cols;
pub use se::{se_backward, se_forward, SeCache};
pub use tensor::{Param, ParamId, ParamSet, Tensor};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for a table of {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("sequence of length {len} is shorter than kernel/window {window}")]
    TooShort { len: usize, window: usize },
    #[error("channel count {channels} is not divisible by SE ratio {ratio}")]
    SeRatio { channels: usize, ratio: usize },
    #[error("backward called without a recorded forward pass")]
    NoForward,
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// Floating point element type of the numeric core.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += x`
#[inline]
pub(crate) fn add_into<F: Real>(x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}
