use super::{add_into, axpy, dot, Real, Tensor};

/// Epsilon inside the log of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// `x · w + b` with `w: H × O`.
pub fn dense_forward<F: Real>(x: &[F], w: &Tensor<F>, b: &Tensor<F>) -> Vec<F> {
    let mut out = b.data().to_vec();
    for (i, &v) in x.iter().enumerate() {
        axpy(v, w.row(i), &mut out);
    }
    out
}

/// Accumulates weight and bias gradients; returns `dx`.
pub fn dense_backward<F: Real>(x: &[F], w: &Tensor<F>, dout: &[F], dw: &mut Tensor<F>, db: &mut Tensor<F>) -> Vec<F> {
    add_into(dout, db.data_mut());
    let mut dx = vec![F::zero(); x.len()];
    for (i, &v) in x.iter().enumerate() {
        axpy(v, dout, dw.row_mut(i));
        dx[i] = dot(w.row(i), dout);
    }
    dx
}

/// Max-subtracted softmax.
pub fn softmax<F: Real>(z: &[F]) -> Vec<F> {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-Σ onehot_i · log(p_i + ε)`.
pub fn cross_entropy<F: Real>(p: &[F], onehot: &[F]) -> F {
    let eps = F::lit(LOG_EPS);
    -p.iter().zip(onehot).map(|(&pi, &yi)| yi * (pi + eps).ln()).sum::<F>()
}

/// Exact gradient of `cross_entropy(softmax(z), onehot(target))` with
/// respect to the logits `z`, given `p = softmax(z)`.
pub fn softmax_cross_entropy_grad<F: Real>(p: &[F], target: usize) -> Vec<F> {
    let scale = p[target] / (p[target] + F::lit(LOG_EPS));
    p.iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == target { F::one() } else { F::zero() };
            scale * (pj - delta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
        let a = softmax(&[1.3f64, -0.4]);
        let b = softmax(&[101.3f64, 99.6]);
        assert!((a[0] - b[0]).abs() < 1e-12);
        let big = softmax(&[1000.0f64, -1000.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_near_zero_for_confident_hit() {
        let l = cross_entropy(&[1.0 - 1e-9f64, 1e-9], &[1.0, 0.0]);
        assert!(l.abs() < 1e-8);
    }

    #[test]
    fn dense_toy() {
        let w = Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        assert_eq!(dense_forward(&[1.0, 1.0], &w, &b), vec![4.5, 5.5]);
    }
}
