//! GRU and LSTM layers with backpropagation through time.
//!
//! Both layers take precomputed input projections `xp[t] = W·x_t + b_in`
//! (`T × G·H`, gate blocks contiguous) so the projection can be computed
//! by whichever route is cheapest for the caller. Recurrent weights are
//! stored as `U: H × G·H`, recurrent biases as `b_rec: G·H`.
//!
//! GRU gate order is `[z | r | h̃]`:
//!
//! ```text
//! z_t = σ(xp_z + U_z h_{t-1} + b_z)
//! r_t = σ(xp_r + U_r h_{t-1} + b_r)
//! h̃_t = tanh(xp_h + U_h (r_t ⊙ h_{t-1}) + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ h̃_t
//! ```
//!
//! LSTM gate order is `[i | f | g | o]` with the usual
//! `c_t = f ⊙ c_{t-1} + i ⊙ g`, `h_t = o ⊙ tanh(c_t)`.

use super::activation::sigmoid_scalar;
use super::{add_into, axpy, conv1d_backward, conv1d_forward, dot, NnError, Real, Result, Tensor};

fn check_recurrent<F: Real>(xp: &Tensor<F>, u: &Tensor<F>, b_rec: &Tensor<F>, gates: usize) -> Result<usize> {
    let h = u.rows();
    if u.cols() != gates * h || xp.cols() != gates * h || b_rec.len() != gates * h {
        return Err(NnError::Shape(format!(
            "recurrent layer with {gates} gates: xp {:?}, U {:?}, b_rec {:?}",
            xp.shape(),
            u.shape(),
            b_rec.shape()
        )));
    }
    Ok(h)
}

/// `x · w + b` for `x: T × D`, `w: D × G`.
pub fn input_projection<F: Real>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    conv1d_forward(x, w, b)
}

pub fn input_projection_backward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dxp: &Tensor<F>,
    dx: Option<&mut Tensor<F>>,
    dw: &mut Tensor<F>,
    db: &mut Tensor<F>,
) -> Result<()> {
    conv1d_backward(x, w, dxp, dx, dw, db)
}

#[derive(Debug, Clone)]
pub struct GruCache<F> {
    hs: Tensor<F>,
    z: Vec<F>,
    r: Vec<F>,
    cand: Vec<F>,
}

/// Runs the GRU from `h_0 = 0` and returns the full hidden sequence `T × H`.
pub fn gru_forward<F: Real>(xp: &Tensor<F>, u: &Tensor<F>, b_rec: &Tensor<F>) -> Result<(Tensor<F>, GruCache<F>)> {
    let h = check_recurrent(xp, u, b_rec, 3)?;
    let t_len = xp.rows();
    let mut hs = Tensor::zeros(&[t_len, h]);
    let (mut z, mut r, mut cand) = (vec![F::zero(); t_len * h], vec![F::zero(); t_len * h], vec![F::zero(); t_len * h]);
    let b = b_rec.data();
    let mut h_prev = vec![F::zero(); h];
    let mut acc = vec![F::zero(); 2 * h];
    let mut acc_h = vec![F::zero(); h];
    let mut rh = vec![F::zero(); h];
    for t in 0..t_len {
        let x = xp.row(t);
        for j in 0..2 * h {
            acc[j] = x[j] + b[j];
        }
        for (i, &hv) in h_prev.iter().enumerate() {
            if hv != F::zero() {
                axpy(hv, &u.row(i)[..2 * h], &mut acc);
            }
        }
        let zt = &mut z[t * h..(t + 1) * h];
        let rt = &mut r[t * h..(t + 1) * h];
        for j in 0..h {
            zt[j] = sigmoid_scalar(acc[j]);
            rt[j] = sigmoid_scalar(acc[h + j]);
            rh[j] = rt[j] * h_prev[j];
            acc_h[j] = x[2 * h + j] + b[2 * h + j];
        }
        for (i, &v) in rh.iter().enumerate() {
            if v != F::zero() {
                axpy(v, &u.row(i)[2 * h..], &mut acc_h);
            }
        }
        let ct = &mut cand[t * h..(t + 1) * h];
        let out = hs.row_mut(t);
        for j in 0..h {
            ct[j] = acc_h[j].tanh();
            out[j] = (F::one() - zt[j]) * h_prev[j] + zt[j] * ct[j];
        }
        h_prev.copy_from_slice(out);
    }
    Ok((hs.clone(), GruCache { hs, z, r, cand }))
}

/// Backpropagates `dhs: T × H` and returns `dxp: T × 3H`. Gradients of `U`
/// and `b_rec` are accumulated.
pub fn gru_backward<F: Real>(
    u: &Tensor<F>,
    cache: &GruCache<F>,
    dhs: &Tensor<F>,
    du: &mut Tensor<F>,
    db_rec: &mut Tensor<F>,
) -> Tensor<F> {
    let h = u.rows();
    let t_len = cache.hs.rows();
    let mut dxp = Tensor::zeros(&[t_len, 3 * h]);
    let zeros = vec![F::zero(); h];
    let mut dh_next = vec![F::zero(); h];
    let mut dh = vec![F::zero(); h];
    let mut rh = vec![F::zero(); h];
    for t in (0..t_len).rev() {
        let h_prev: &[F] = if t == 0 { &zeros } else { cache.hs.row(t - 1) };
        let (z, r, cand) = (&cache.z[t * h..(t + 1) * h], &cache.r[t * h..(t + 1) * h], &cache.cand[t * h..(t + 1) * h]);
        for j in 0..h {
            dh[j] = dhs.row(t)[j] + dh_next[j];
        }
        let g = dxp.row_mut(t);
        let mut dhp = vec![F::zero(); h];
        for j in 0..h {
            let dz = dh[j] * (cand[j] - h_prev[j]);
            let dcand = dh[j] * z[j];
            dhp[j] = dh[j] * (F::one() - z[j]);
            g[2 * h + j] = dcand * (F::one() - cand[j] * cand[j]);
            g[j] = dz * z[j] * (F::one() - z[j]);
            rh[j] = r[j] * h_prev[j];
        }
        let (gzr, gh) = g.split_at_mut(2 * h);
        for i in 0..h {
            let urow = u.row(i);
            if rh[i] != F::zero() {
                axpy(rh[i], gh, &mut du.row_mut(i)[2 * h..]);
            }
            let drh = dot(&urow[2 * h..], gh);
            gzr[h + i] = drh * h_prev[i] * r[i] * (F::one() - r[i]);
            dhp[i] += drh * r[i];
        }
        for i in 0..h {
            if h_prev[i] != F::zero() {
                axpy(h_prev[i], gzr, &mut du.row_mut(i)[..2 * h]);
            }
            dhp[i] += dot(&u.row(i)[..2 * h], gzr);
        }
        add_into(dxp.row(t), db_rec.data_mut());
        dh_next = dhp;
    }
    dxp
}

/// GRU over raw inputs `x: T × D`, with `w: D × 3H` and `b_in: 3H`.
pub fn gru_layer<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b_in: &Tensor<F>,
    u: &Tensor<F>,
    b_rec: &Tensor<F>,
) -> Result<Tensor<F>> {
    let xp = input_projection(x, w, b_in)?;
    Ok(gru_forward(&xp, u, b_rec)?.0)
}

#[derive(Debug, Clone)]
pub struct LstmCache<F> {
    reverse: bool,
    hs: Tensor<F>,
    cs: Vec<F>,
    tanh_c: Vec<F>,
    /// Post-activation gates `T × 4H`.
    gates: Vec<F>,
}

/// Time index of processing step `s`.
fn time_at(s: usize, t_len: usize, reverse: bool) -> usize {
    if reverse { t_len - 1 - s } else { s }
}

/// Runs an LSTM from zero state. With `reverse` the sequence is consumed
/// right to left; outputs stay aligned with input time.
pub fn lstm_forward<F: Real>(
    xp: &Tensor<F>,
    u: &Tensor<F>,
    b_rec: &Tensor<F>,
    reverse: bool,
) -> Result<(Tensor<F>, LstmCache<F>)> {
    let h = check_recurrent(xp, u, b_rec, 4)?;
    let t_len = xp.rows();
    let mut hs = Tensor::zeros(&[t_len, h]);
    let mut cs = vec![F::zero(); t_len * h];
    let mut tanh_c = vec![F::zero(); t_len * h];
    let mut gates = vec![F::zero(); t_len * 4 * h];
    let mut h_prev = vec![F::zero(); h];
    let mut c_prev = vec![F::zero(); h];
    let mut acc = vec![F::zero(); 4 * h];
    for s in 0..t_len {
        let t = time_at(s, t_len, reverse);
        for (a, (&x, &b)) in acc.iter_mut().zip(xp.row(t).iter().zip(b_rec.data())) {
            *a = x + b;
        }
        for (i, &hv) in h_prev.iter().enumerate() {
            if hv != F::zero() {
                axpy(hv, u.row(i), &mut acc);
            }
        }
        let gt = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let ig = sigmoid_scalar(acc[j]);
            let fg = sigmoid_scalar(acc[h + j]);
            let gg = acc[2 * h + j].tanh();
            let og = sigmoid_scalar(acc[3 * h + j]);
            gt[j] = ig;
            gt[h + j] = fg;
            gt[2 * h + j] = gg;
            gt[3 * h + j] = og;
            let c = fg * c_prev[j] + ig * gg;
            let tc = c.tanh();
            cs[t * h + j] = c;
            tanh_c[t * h + j] = tc;
            c_prev[j] = c;
            h_prev[j] = og * tc;
        }
        hs.row_mut(t).copy_from_slice(&h_prev);
    }
    Ok((hs.clone(), LstmCache { reverse, hs, cs, tanh_c, gates }))
}

/// Backpropagates `dhs: T × H` through one direction and returns `dxp`.
pub fn lstm_backward<F: Real>(
    u: &Tensor<F>,
    cache: &LstmCache<F>,
    dhs: &Tensor<F>,
    du: &mut Tensor<F>,
    db_rec: &mut Tensor<F>,
) -> Tensor<F> {
    let h = u.rows();
    let t_len = cache.hs.rows();
    let mut dxp = Tensor::zeros(&[t_len, 4 * h]);
    let zeros = vec![F::zero(); h];
    let mut dh_next = vec![F::zero(); h];
    let mut dc_next = vec![F::zero(); h];
    for s in (0..t_len).rev() {
        let t = time_at(s, t_len, cache.reverse);
        let (h_prev, c_prev): (&[F], &[F]) = if s == 0 {
            (&zeros, &zeros)
        } else {
            let tp = time_at(s - 1, t_len, cache.reverse);
            (cache.hs.row(tp), &cache.cs[tp * h..(tp + 1) * h])
        };
        let gt = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let tc = &cache.tanh_c[t * h..(t + 1) * h];
        let da = dxp.row_mut(t);
        for j in 0..h {
            let (ig, fg, gg, og) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
            let dh = dhs.row(t)[j] + dh_next[j];
            let dc = dc_next[j] + dh * og * (F::one() - tc[j] * tc[j]);
            da[j] = dc * gg * ig * (F::one() - ig);
            da[h + j] = dc * c_prev[j] * fg * (F::one() - fg);
            da[2 * h + j] = dc * ig * (F::one() - gg * gg);
            da[3 * h + j] = dh * tc[j] * og * (F::one() - og);
            dc_next[j] = dc * fg;
        }
        for i in 0..h {
            if h_prev[i] != F::zero() {
                axpy(h_prev[i], da, du.row_mut(i));
            }
            dh_next[i] = dot(u.row(i), da);
        }
        add_into(da, db_rec.data_mut());
    }
    dxp
}

/// Bidirectional LSTM over raw inputs. Each direction is
/// `(w: D × 4H, b_in, u: H × 4H, b_rec)`; the output is `[forward_t ; backward_t]`.
pub fn bilstm_layer<F: Real>(x: &Tensor<F>, fwd: [&Tensor<F>; 4], bwd: [&Tensor<F>; 4]) -> Result<Tensor<F>> {
    let (hf, _) = lstm_forward(&input_projection(x, fwd[0], fwd[1])?, fwd[2], fwd[3], false)?;
    let (hb, _) = lstm_forward(&input_projection(x, bwd[0], bwd[1])?, bwd[2], bwd[3], true)?;
    Ok(concat_cols(&hf, &hb))
}

pub(crate) fn concat_cols<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (t, ca, cb) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[t, ca + cb]);
    for i in 0..t {
        let row = out.row_mut(i);
        row[..ca].copy_from_slice(a.row(i));
        row[ca..].copy_from_slice(b.row(i));
    }
    out
}
