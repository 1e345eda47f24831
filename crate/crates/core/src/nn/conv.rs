//! Embedding lookup and valid 1-D convolution.
//!
//! Besides the plain layers there is a fused "embedding followed by
//! convolution" path. Because the input of the first layer is always a row of
//! the embedding table, `embedding · kernel[k]` can be tabulated once per
//! parameter update (`K × 96 × C_out`), after which a forward pass is a sum
//! of table lookups. The backward pass scatters upstream gradients into a
//! table-shaped buffer and contracts it with the embedding and kernel once.

use super::{add_into, axpy, dot, NnError, Real, Result, Tensor};

fn conv_dims<F: Real>(kernel: &Tensor<F>) -> Result<(usize, usize, usize)> {
    match *kernel.shape() {
        [k, cin, cout] => Ok((k, cin, cout)),
        [cin, cout] => Ok((1, cin, cout)),
        _ => Err(NnError::Shape(format!("kernel must be K×C_in×C_out, got {:?}", kernel.shape()))),
    }
}

/// `out[t] = table[indices[t]]`.
pub fn embed_forward<F: Real>(indices: &[u8], table: &Tensor<F>) -> Result<Tensor<F>> {
    let (rows, d) = (table.rows(), table.cols());
    let mut out = Tensor::zeros(&[indices.len(), d]);
    for (t, &i) in indices.iter().enumerate() {
        let i = i as usize;
        if i >= rows {
            return Err(NnError::IndexOutOfRange { index: i, rows });
        }
        out.row_mut(t).copy_from_slice(table.row(i));
    }
    Ok(out)
}

/// Accumulates the table gradient. Row 0 is frozen and never receives one.
pub fn embed_backward<F: Real>(indices: &[u8], dout: &Tensor<F>, dtable: &mut Tensor<F>) {
    for (t, &i) in indices.iter().enumerate() {
        if i != 0 {
            add_into(dout.row(t), dtable.row_mut(i as usize));
        }
    }
}

/// Valid convolution with stride 1:
/// `out[t, o] = bias[o] + Σ_{k, c} x[t + k, c] · kernel[k, c, o]`.
pub fn conv1d_forward<F: Real>(x: &Tensor<F>, kernel: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let (k, cin, cout) = conv_dims(kernel)?;
    let t_in = x.rows();
    if x.cols() != cin || bias.len() != cout {
        return Err(NnError::Shape(format!(
            "conv1d: input {:?}, kernel {:?}, bias {:?}",
            x.shape(),
            kernel.shape(),
            bias.shape()
        )));
    }
    if t_in < k {
        return Err(NnError::TooShort { len: t_in, window: k });
    }
    let t_out = t_in - k + 1;
    let w = kernel.data();
    let mut out = Tensor::zeros(&[t_out, cout]);
    for t in 0..t_out {
        let row = out.row_mut(t);
        row.copy_from_slice(bias.data());
        for kk in 0..k {
            let xr = x.row(t + kk);
            for (c, &xv) in xr.iter().enumerate() {
                if xv != F::zero() {
                    let off = (kk * cin + c) * cout;
                    axpy(xv, &w[off..off + cout], row);
                }
            }
        }
    }
    Ok(out)
}

/// Backward of [`conv1d_forward`]. `dx` is optional; the first layer never
/// needs it.
pub fn conv1d_backward<F: Real>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    dout: &Tensor<F>,
    mut dx: Option<&mut Tensor<F>>,
    dkernel: &mut Tensor<F>,
    dbias: &mut Tensor<F>,
) -> Result<()> {
    let (k, cin, cout) = conv_dims(kernel)?;
    let w = kernel.data();
    let dw = dkernel.data_mut();
    for t in 0..dout.rows() {
        let g = dout.row(t);
        add_into(g, dbias.data_mut());
        for kk in 0..k {
            for c in 0..cin {
                let off = (kk * cin + c) * cout;
                let xv = x.row(t + kk)[c];
                if xv != F::zero() {
                    axpy(xv, g, &mut dw[off..off + cout]);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    dx.row_mut(t + kk)[c] += dot(&w[off..off + cout], g);
                }
            }
        }
    }
    Ok(())
}

/// Tabulates `table · kernel[k]` for every tap `k`: shape `K × rows × C_out`.
pub fn embed_conv_table<F: Real>(table: &Tensor<F>, kernel: &Tensor<F>) -> Result<Tensor<F>> {
    let (k, cin, cout) = conv_dims(kernel)?;
    if table.cols() != cin {
        return Err(NnError::Shape(format!("embedding width {} vs kernel input {cin}", table.cols())));
    }
    let rows = table.rows();
    let w = kernel.data();
    let mut out = Tensor::zeros(&[k, rows, cout]);
    let o = out.data_mut();
    for kk in 0..k {
        for v in 0..rows {
            let dst = &mut o[(kk * rows + v) * cout..(kk * rows + v + 1) * cout];
            for (c, &e) in table.row(v).iter().enumerate() {
                if e != F::zero() {
                    let off = (kk * cin + c) * cout;
                    axpy(e, &w[off..off + cout], dst);
                }
            }
        }
    }
    Ok(out)
}

/// Forward of the fused embedding + convolution using a table from
/// [`embed_conv_table`].
pub fn embed_conv_forward<F: Real>(indices: &[u8], table: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let [k, rows, cout] = *table.shape() else {
        return Err(NnError::Shape(format!("fused table must be 3-D, got {:?}", table.shape())));
    };
    if indices.len() < k {
        return Err(NnError::TooShort { len: indices.len(), window: k });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i as usize >= rows) {
        return Err(NnError::IndexOutOfRange { index: bad as usize, rows });
    }
    let t_out = indices.len() - k + 1;
    let tbl = table.data();
    let mut out = Tensor::zeros(&[t_out, cout]);
    for t in 0..t_out {
        let row = out.row_mut(t);
        row.copy_from_slice(bias.data());
        for kk in 0..k {
            let v = indices[t + kk] as usize;
            if v != 0 {
                let off = (kk * rows + v) * cout;
                add_into(&tbl[off..off + cout], row);
            }
        }
    }
    Ok(out)
}

/// Scatters `dout` into the table-shaped gradient buffer and the bias.
pub fn embed_conv_backward<F: Real>(indices: &[u8], dout: &Tensor<F>, dtable: &mut Tensor<F>, dbias: &mut Tensor<F>) {
    let [k, rows, cout] = *dtable.shape() else { unreachable!("fused table is 3-D") };
    let g = dtable.data_mut();
    for t in 0..dout.rows() {
        let d = dout.row(t);
        add_into(d, dbias.data_mut());
        for kk in 0..k {
            let v = indices[t + kk] as usize;
            if v != 0 {
                let off = (kk * rows + v) * cout;
                add_into(d, &mut g[off..off + cout]);
            }
        }
    }
}

/// Contracts an accumulated table gradient into embedding and kernel
/// gradients.
pub fn embed_conv_finish<F: Real>(
    dtable_fused: &Tensor<F>,
    table: &Tensor<F>,
    kernel: &Tensor<F>,
    dtable: &mut Tensor<F>,
    dkernel: &mut Tensor<F>,
) -> Result<()> {
    let (k, cin, cout) = conv_dims(kernel)?;
    let rows = table.rows();
    let g = dtable_fused.data();
    let w = kernel.data();
    let dw = dkernel.data_mut();
    for kk in 0..k {
        for v in 1..rows {
            let gv = &g[(kk * rows + v) * cout..(kk * rows + v + 1) * cout];
            if gv.iter().all(|&x| x == F::zero()) {
                continue;
            }
            let erow = table.row(v);
            let drow = dtable.row_mut(v);
            for c in 0..cin {
                let off = (kk * cin + c) * cout;
                axpy(erow[c], gv, &mut dw[off..off + cout]);
                drow[c] += dot(&w[off..off + cout], gv);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (k, cin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let t_out = x.rows() - k + 1;
        let mut out = vec![0.0; t_out * cout];
        for t in 0..t_out {
            for o in 0..cout {
                let mut s = b.data()[o];
                for kk in 0..k {
                    for c in 0..cin {
                        s += x.at(t + kk, c) * w.data()[(kk * cin + c) * cout + o];
                    }
                }
                out[t * cout + o] = s;
            }
        }
        out
    }

    #[test]
    fn embedding_lookup() {
        let table = Tensor::<f64>::from_vec(&[3, 3], vec![0., 0., 0., 1., 0., 0., 0., 1., 0.]).unwrap();
        let out = embed_forward(&[2, 0, 1], &table).unwrap();
        assert_eq!(out.row(0), &[0., 1., 0.]);
        assert_eq!(out.row(1), &[0., 0., 0.]);
        assert_eq!(out.row(2), &[1., 0., 0.]);
        assert!(matches!(embed_forward(&[3], &table), Err(NnError::IndexOutOfRange { index: 3, rows: 3 })));
        let pads = embed_forward(&[0, 0], &table).unwrap();
        assert!(pads.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_gradient_counts_occurrences() {
        let idx = [1u8, 2, 1, 0, 1];
        let dout = Tensor::<f64>::from_vec(&[5, 2], vec![1.0; 10]).unwrap();
        let mut g = Tensor::zeros(&[3, 2]);
        embed_backward(&idx, &dout, &mut g);
        assert_eq!(g.row(1), &[3.0, 3.0]);
        assert_eq!(g.row(2), &[1.0, 1.0]);
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn identity_and_constant_kernels() {
        let x = Tensor::<f64>::from_vec(&[4, 1], vec![1., -2., 3., 0.5]).unwrap();
        let id = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let zero_b = Tensor::zeros(&[1]);
        assert_eq!(conv1d_forward(&x, &id, &zero_b).unwrap().data(), x.data());

        let z = Tensor::zeros(&[3, 1, 2]);
        let b = Tensor::from_vec(&[2], vec![0.25, -1.0]).unwrap();
        let y = conv1d_forward(&x, &z, &b).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!(y.data().chunks(2).all(|r| r == [0.25, -1.0]));
        assert!(matches!(conv1d_forward(&x, &Tensor::zeros(&[5, 1, 1]), &zero_b), Err(NnError::TooShort { .. })));
    }

    #[test]
    fn conv_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (t, k, cin, cout) = (rng.gen_range(3..12), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
            use rand::Rng;
            let x = Tensor::<f64>::uniform(&[t, cin], 1.0, &mut rng);
            let w = Tensor::<f64>::uniform(&[k, cin, cout], 1.0, &mut rng);
            let b = Tensor::<f64>::uniform(&[cout], 1.0, &mut rng);
            let fast = conv1d_forward(&x, &w, &b).unwrap();
            for (a, e) in fast.data().iter().zip(naive_conv(&x, &w, &b)) {
                assert!((a - e).abs() < 1e-6);
            }
        }
    }

    use rand::Rng;

    #[test]
    fn fused_path_equals_embed_then_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut table = Tensor::<f64>::uniform(&[6, 3], 1.0, &mut rng);
        table.row_mut(0).iter_mut().for_each(|v| *v = 0.0);
        let w = Tensor::<f64>::uniform(&[2, 3, 4], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[4], 1.0, &mut rng);
        let idx: Vec<u8> = (0..9).map(|_| rng.gen_range(0..6)).collect();

        let plain = conv1d_forward(&embed_forward(&idx, &table).unwrap(), &w, &b).unwrap();
        let tbl = embed_conv_table(&table, &w).unwrap();
        let fused = embed_conv_forward(&idx, &tbl, &b).unwrap();
        for (a, e) in fused.data().iter().zip(plain.data()) {
            assert!((a - e).abs() < 1e-12);
        }

        let dout = Tensor::<f64>::uniform(plain.shape(), 1.0, &mut rng);
        let (mut de1, mut dw1, mut db1) = (Tensor::zeros(&[6, 3]), Tensor::zeros(&[2, 3, 4]), Tensor::zeros(&[4]));
        let x = embed_forward(&idx, &table).unwrap();
        let mut dx = Tensor::zeros(x.shape());
        conv1d_backward(&x, &w, &dout, Some(&mut dx), &mut dw1, &mut db1).unwrap();
        embed_backward(&idx, &dx, &mut de1);

        let (mut de2, mut dw2, mut db2) = (Tensor::zeros(&[6, 3]), Tensor::zeros(&[2, 3, 4]), Tensor::zeros(&[4]));
        let mut g = Tensor::zeros(tbl.shape());
        embed_conv_backward(&idx, &dout, &mut g, &mut db2);
        embed_conv_finish(&g, &table, &w, &mut de2, &mut dw2).unwrap();
        for (a, b) in [(&de1, &de2), (&dw1, &dw2), (&db1, &db2)] {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
