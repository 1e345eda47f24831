use super::{add_into, NnError, Real, Result, Tensor};

/// Non-overlapping max pooling over time. Returns the pooled map and, per
/// output entry, the input row that won (first maximum on ties).
pub fn maxpool1d<F: Real>(x: &Tensor<F>, window: usize) -> Result<(Tensor<F>, Vec<usize>)> {
    let (t, c) = (x.rows(), x.cols());
    if window == 0 || window > t {
        return Err(NnError::TooShort { len: t, window });
    }
    let t_out = t / window;
    let mut out = Tensor::zeros(&[t_out, c]);
    let mut arg = vec![0usize; t_out * c];
    for j in 0..t_out {
        let base = j * window;
        let dst = out.row_mut(j);
        dst.copy_from_slice(x.row(base));
        let a = &mut arg[j * c..(j + 1) * c];
        a.iter_mut().for_each(|v| *v = base);
        for s in base + 1..base + window {
            for (ch, &v) in x.row(s).iter().enumerate() {
                if v > dst[ch] {
                    dst[ch] = v;
                    a[ch] = s;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool1d_backward<F: Real>(dout: &Tensor<F>, argmax: &[usize], input_rows: usize) -> Tensor<F> {
    let c = dout.cols();
    let mut dx = Tensor::zeros(&[input_rows, c]);
    for j in 0..dout.rows() {
        for ch in 0..c {
            let src = argmax[j * c + ch];
            dx.row_mut(src)[ch] += dout.row(j)[ch];
        }
    }
    dx
}

/// Number of rows that [`global_avg_pool`] averages over.
pub(crate) fn pooled_rows(t: usize, valid: Option<usize>) -> usize {
    valid.map_or(t, |v| v.clamp(1, t.max(1)))
}

/// Mean over time per channel. With `valid = Some(n)` only the first `n`
/// rows count (clamped to at least one row).
pub fn global_avg_pool<F: Real>(x: &Tensor<F>, valid: Option<usize>) -> Vec<F> {
    let n = pooled_rows(x.rows(), valid);
    let mut out = vec![F::zero(); x.cols()];
    for t in 0..n {
        add_into(x.row(t), &mut out);
    }
    let inv = F::one() / F::lit(n as f64);
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

pub fn global_avg_pool_backward<F: Real>(dout: &[F], rows: usize, valid: Option<usize>) -> Tensor<F> {
    let n = pooled_rows(rows, valid);
    let mut dx = Tensor::zeros(&[rows, dout.len()]);
    let inv = F::one() / F::lit(n as f64);
    for t in 0..n {
        for (d, &g) in dx.row_mut(t).iter_mut().zip(dout) {
            *d = g * inv;
        }
    }
    dx
}
