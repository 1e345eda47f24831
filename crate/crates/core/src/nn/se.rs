//! Squeeze-and-excitation over the channel axis of a `T × C` feature map.

use super::activation::sigmoid_scalar;
use super::pool::global_avg_pool;
use super::{add_into, axpy, dot, NnError, Real, Result, Tensor};

#[derive(Debug, Clone)]
pub struct SeCache<F> {
    pub squeeze: Vec<F>,
    hidden_pre: Vec<F>,
    hidden: Vec<F>,
    /// Channel weights in (0, 1).
    pub excitation: Vec<F>,
}

/// `w1: C × C/r`, `b1: C/r`, `w2: C/r × C`, `b2: C`.
pub fn se_forward<F: Real>(
    x: &Tensor<F>,
    w1: &Tensor<F>,
    b1: &Tensor<F>,
    w2: &Tensor<F>,
    b2: &Tensor<F>,
) -> Result<(Tensor<F>, SeCache<F>)> {
    let c = x.cols();
    let hdim = w1.cols();
    if w1.rows() != c || b1.len() != hdim || w2.rows() != hdim || w2.cols() != c || b2.len() != c {
        return Err(NnError::Shape(format!(
            "se block: input {:?}, w1 {:?}, w2 {:?}",
            x.shape(),
            w1.shape(),
            w2.shape()
        )));
    }
    let squeeze = global_avg_pool(x, None);
    let mut hidden_pre = b1.data().to_vec();
    for (ch, &s) in squeeze.iter().enumerate() {
        axpy(s, w1.row(ch), &mut hidden_pre);
    }
    let hidden: Vec<F> = hidden_pre.iter().map(|&v| v.max(F::zero())).collect();
    let mut logits = b2.data().to_vec();
    for (j, &a) in hidden.iter().enumerate() {
        axpy(a, w2.row(j), &mut logits);
    }
    let excitation: Vec<F> = logits.into_iter().map(sigmoid_scalar).collect();
    let mut y = x.clone();
    for t in 0..y.rows() {
        for (v, &w) in y.row_mut(t).iter_mut().zip(&excitation) {
            *v *= w;
        }
    }
    Ok((y, SeCache { squeeze, hidden_pre, hidden, excitation }))
}

/// Returns `dx`; parameter gradients go into `dparams` in the order
/// `w1, b1, w2, b2`.
pub fn se_backward<F: Real>(
    x: &Tensor<F>,
    cache: &SeCache<F>,
    dy: &Tensor<F>,
    w1: &Tensor<F>,
    w2: &Tensor<F>,
    dparams: [&mut Tensor<F>; 4],
) -> Tensor<F> {
    let [dw1, db1, dw2, db2] = dparams;
    let (t_len, c) = (x.rows(), x.cols());
    let mut dexc = vec![F::zero(); c];
    let mut dx = dy.clone();
    for t in 0..t_len {
        let (xr, gr) = (x.row(t), dy.row(t));
        for ch in 0..c {
            dexc[ch] += gr[ch] * xr[ch];
        }
        for (d, &w) in dx.row_mut(t).iter_mut().zip(&cache.excitation) {
            *d *= w;
        }
    }
    let dlogit: Vec<F> = dexc.iter().zip(&cache.excitation).map(|(&g, &w)| g * w * (F::one() - w)).collect();
    add_into(&dlogit, db2.data_mut());
    let mut dhidden_pre = vec![F::zero(); cache.hidden.len()];
    for (j, &a) in cache.hidden.iter().enumerate() {
        axpy(a, &dlogit, dw2.row_mut(j));
        if cache.hidden_pre[j] > F::zero() {
            dhidden_pre[j] = dot(w2.row(j), &dlogit);
        }
    }
    add_into(&dhidden_pre, db1.data_mut());
    let inv_t = F::one() / F::lit(t_len as f64);
    for ch in 0..c {
        axpy(cache.squeeze[ch], &dhidden_pre, dw1.row_mut(ch));
        let ds = dot(w1.row(ch), &dhidden_pre) * inv_t;
        for t in 0..t_len {
            dx.row_mut(t)[ch] += ds;
        }
    }
    dx
}
