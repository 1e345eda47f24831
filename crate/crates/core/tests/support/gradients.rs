//! Central finite-difference checks of every differentiable layer and of the
//! three full models, in f64.

use charphish::encoder::{Alphabet, EncodedEmail};
use charphish::models::{ConvLayerSpec, Mode, Model, ModelKind, NetworkSpec};
use charphish::nn::gradcheck::{numeric_gradient, relative_error, DEFAULT_STEP};
use charphish::nn::*;
use charphish::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type T = Tensor<f64>;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> T {
    Tensor::uniform(shape, 1.0, rng)
}

/// `Σ r ⊙ y`, the scalar every layer check differentiates.
fn project(y: &T, r: &T) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Numeric gradient of `loss` with respect to input `which`.
fn numeric_wrt(inputs: &[T], which: usize, loss: &dyn Fn(&[T]) -> f64) -> Vec<f64> {
    let shape = inputs[which].shape().to_vec();
    numeric_gradient(
        |x| {
            let mut probe = inputs.to_vec();
            probe[which] = Tensor::from_vec(&shape, x.to_vec()).unwrap();
            loss(&probe)
        },
        inputs[which].data(),
        DEFAULT_STEP,
    )
}

/// Worst relative error over the listed inputs.
fn worst(inputs: &[T], analytic: &[(usize, &T)], loss: &dyn Fn(&[T]) -> f64) -> f64 {
    analytic.iter().map(|(i, g)| relative_error(g.data(), &numeric_wrt(inputs, *i, loss))).fold(0.0, f64::max)
}

fn indices(t: usize, rows: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..t).map(|_| rng.gen_range(0..rows) as u8).collect()
}

fn embedding(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> T {
    let mut t = rand_t(&[rows, d], rng);
    t.row_mut(0).iter_mut().for_each(|v| *v = 0.0);
    t
}

fn layer_cases(rng: &mut ChaCha8Rng) -> Vec<(String, f64)> {
    let mut out = Vec::new();

    // Embedding: the pad row is frozen, so compare the trainable rows only.
    let idx = indices(12, 7, rng);
    let table = embedding(7, 4, rng);
    let r = rand_t(&[12, 4], rng);
    let mut dt = Tensor::zeros(&[7, 4]);
    embed_backward(&idx, &r, &mut dt);
    let loss = |p: &[T]| project(&embed_forward(&idx, &p[0]).unwrap(), &r);
    let num = numeric_wrt(std::slice::from_ref(&table), 0, &loss);
    out.push(("embed".into(), relative_error(&dt.data()[4..], &num[4..])));

    // Valid convolution.
    let (x, k, b) = (rand_t(&[10, 3], rng), rand_t(&[3, 3, 4], rng), rand_t(&[4], rng));
    let r = rand_t(&[8, 4], rng);
    let (mut dx, mut dk, mut db) = (Tensor::zeros(&[10, 3]), Tensor::zeros(&[3, 3, 4]), Tensor::zeros(&[4]));
    conv1d_backward(&x, &k, &r, Some(&mut dx), &mut dk, &mut db).unwrap();
    let loss = |p: &[T]| project(&conv1d_forward(&p[0], &p[1], &p[2]).unwrap(), &r);
    out.push(("conv1d".into(), worst(&[x, k, b], &[(0, &dx), (1, &dk), (2, &db)], &loss)));

    // Fused embedding + convolution.
    let idx = indices(12, 6, rng);
    let (table, k, b) = (embedding(6, 4, rng), rand_t(&[3, 4, 5], rng), rand_t(&[5], rng));
    let r = rand_t(&[10, 5], rng);
    let fused = embed_conv_table(&table, &k).unwrap();
    let (mut dfused, mut db) = (Tensor::zeros(fused.shape()), Tensor::zeros(&[5]));
    embed_conv_backward(&idx, &r, &mut dfused, &mut db);
    let (mut dtable, mut dk) = (Tensor::zeros(&[6, 4]), Tensor::zeros(&[3, 4, 5]));
    embed_conv_finish(&dfused, &table, &k, &mut dtable, &mut dk).unwrap();
    let loss = |p: &[T]| project(&embed_conv_forward(&idx, &embed_conv_table(&p[0], &p[1]).unwrap(), &p[2]).unwrap(), &r);
    let inputs = [table, k, b];
    let num_table = numeric_wrt(&inputs, 0, &loss);
    let e_table = relative_error(&dtable.data()[4..], &num_table[4..]);
    out.push(("embed_conv".into(), e_table.max(worst(&inputs, &[(1, &dk), (2, &db)], &loss))));

    // Thresholded ReLU, away from the kink.
    let x = rand_t(&[6, 3], rng).map(|v| if v.abs() < 0.05 { 0.3 } else { v });
    let r = rand_t(&[6, 3], rng);
    let mut dy = r.clone();
    thresholded_relu_backward(&x, &mut dy, DEFAULT_THRESHOLD);
    let loss = |p: &[T]| project(&thresholded_relu(&p[0], DEFAULT_THRESHOLD), &r);
    out.push(("thresholded_relu".into(), worst(&[x], &[(0, &dy)], &loss)));

    // tanh and sigmoid.
    let x = rand_t(&[5, 2], rng);
    let r = rand_t(&[5, 2], rng);
    let mut dy = r.clone();
    tanh_backward(&tanh(&x), &mut dy);
    let loss = |p: &[T]| project(&tanh(&p[0]), &r);
    out.push(("tanh".into(), worst(&[x.clone()], &[(0, &dy)], &loss)));
    let s = sigmoid(&x);
    let ds = Tensor::from_vec(&[5, 2], s.data().iter().zip(r.data()).map(|(y, g)| g * y * (1.0 - y)).collect()).unwrap();
    let loss = |p: &[T]| project(&sigmoid(&p[0]), &r);
    out.push(("sigmoid".into(), worst(&[x], &[(0, &ds)], &loss)));

    // Max pooling on distinct values.
    let x = rand_t(&[9, 3], rng);
    let r = rand_t(&[3, 3], rng);
    let (_, arg) = maxpool1d(&x, 3).unwrap();
    let dx = maxpool1d_backward(&r, &arg, 9);
    let loss = |p: &[T]| project(&maxpool1d(&p[0], 3).unwrap().0, &r);
    out.push(("maxpool1d".into(), worst(&[x], &[(0, &dx)], &loss)));

    // Global average pooling, plain and masked.
    for valid in [None, Some(3)] {
        let x = rand_t(&[7, 4], rng);
        let r: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dx = global_avg_pool_backward(&r, 7, valid);
        let loss = |p: &[T]| global_avg_pool(&p[0], valid).iter().zip(&r).map(|(a, b)| a * b).sum();
        out.push((format!("global_avg_pool(valid={valid:?})"), worst(&[x], &[(0, &dx)], &loss)));
    }

    // Squeeze-and-excitation.
    let (x, w1, b1, w2, b2) = (rand_t(&[6, 4], rng), rand_t(&[4, 2], rng), rand_t(&[2], rng), rand_t(&[2, 4], rng), rand_t(&[4], rng));
    let r = rand_t(&[6, 4], rng);
    let (_, cache) = se_forward(&x, &w1, &b1, &w2, &b2).unwrap();
    let mut g = [Tensor::zeros(&[4, 2]), Tensor::zeros(&[2]), Tensor::zeros(&[2, 4]), Tensor::zeros(&[4])];
    let [g1, g2, g3, g4] = &mut g;
    let dx = se_backward(&x, &cache, &r, &w1, &w2, [g1, g2, g3, g4]);
    let loss = |p: &[T]| project(&se_forward(&p[0], &p[1], &p[2], &p[3], &p[4]).unwrap().0, &r);
    out.push((
        "se_block".into(),
        worst(&[x, w1, b1, w2, b2], &[(0, &dx), (1, &g[0]), (2, &g[1]), (3, &g[2]), (4, &g[3])], &loss),
    ));

    // GRU through its input projection.
    let (x, w, bi, u, br) = (rand_t(&[8, 3], rng), rand_t(&[3, 12], rng), rand_t(&[12], rng), rand_t(&[4, 12], rng), rand_t(&[12], rng));
    let r = rand_t(&[8, 4], rng);
    let xp = input_projection(&x, &w, &bi).unwrap();
    let (_, cache) = gru_forward(&xp, &u, &br).unwrap();
    let (mut du, mut dbr) = (Tensor::zeros(&[4, 12]), Tensor::zeros(&[12]));
    let dxp = gru_backward(&u, &cache, &r, &mut du, &mut dbr);
    let (mut dx, mut dw, mut dbi) = (Tensor::zeros(&[8, 3]), Tensor::zeros(&[3, 12]), Tensor::zeros(&[12]));
    input_projection_backward(&x, &w, &dxp, Some(&mut dx), &mut dw, &mut dbi).unwrap();
    let loss = |p: &[T]| project(&gru_layer(&p[0], &p[1], &p[2], &p[3], &p[4]).unwrap(), &r);
    out.push((
        "gru_layer".into(),
        worst(&[x, w, bi, u, br], &[(0, &dx), (1, &dw), (2, &dbi), (3, &du), (4, &dbr)], &loss),
    ));

    // LSTM in both directions.
    for reverse in [false, true] {
        let (xp, u, br) = (rand_t(&[7, 12], rng), rand_t(&[3, 12], rng), rand_t(&[12], rng));
        let r = rand_t(&[7, 3], rng);
        let (_, cache) = lstm_forward(&xp, &u, &br, reverse).unwrap();
        let (mut du, mut dbr) = (Tensor::zeros(&[3, 12]), Tensor::zeros(&[12]));
        let dxp = lstm_backward(&u, &cache, &r, &mut du, &mut dbr);
        let loss = |p: &[T]| project(&lstm_forward(&p[0], &p[1], &p[2], reverse).unwrap().0, &r);
        out.push((format!("lstm(reverse={reverse})"), worst(&[xp, u, br], &[(0, &dxp), (1, &du), (2, &dbr)], &loss)));
    }

    // Dense head and the fused softmax cross-entropy gradient.
    let (x, w, b) = (rand_t(&[1, 5], rng), rand_t(&[5, 2], rng), rand_t(&[2], rng));
    let r = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let (mut dw, mut db) = (Tensor::zeros(&[5, 2]), Tensor::zeros(&[2]));
    let dx = dense_backward(x.data(), &w, &r, &mut dw, &mut db);
    let dx = Tensor::from_vec(&[1, 5], dx).unwrap();
    let loss = |p: &[T]| dense_forward(p[0].data(), &p[1], &p[2]).iter().zip(&r).map(|(a, b)| a * b).sum();
    out.push(("dense".into(), worst(&[x, w, b], &[(0, &dx), (1, &dw), (2, &db)], &loss)));

    let z = rand_t(&[2], rng).map(|v| 3.0 * v);
    let dz = Tensor::from_vec(&[2], softmax_cross_entropy_grad(&softmax(z.data()), 1)).unwrap();
    let loss = |p: &[T]| cross_entropy(&softmax(p[0].data()), &[0.0, 1.0]);
    out.push(("softmax_cross_entropy".into(), worst(&[z], &[(0, &dz)], &loss)));

    out
}

/// Tiny check-mode specs: T ≤ 16, D ≤ 8, H ≤ 4.
pub fn tiny_spec(kind: ModelKind) -> NetworkSpec {
    let mut s = NetworkSpec::preset(kind, 16);
    s.embed_dim = 8;
    s.units = 4;
    if kind == ModelKind::CharCnn {
        s.embed_dim = 6;
        s.conv_layers = vec![
            ConvLayerSpec { filters: 4, kernel: 3, pool: Some(2), se_ratio: Some(2) },
            ConvLayerSpec { filters: 4, kernel: 3, pool: None, se_ratio: Some(2) },
            ConvLayerSpec { filters: 4, kernel: 1, pool: None, se_ratio: Some(4) },
        ];
    }
    s
}

fn model_case(spec: &NetworkSpec, seed: u64) -> Vec<(String, f64)> {
    let alphabet = Alphabet::default();
    let texts = ["Verify NOW http://a.b", "see you at lunch", "CLICK <a href=x>"];
    let batch: Vec<EncodedEmail> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| EncodedEmail::new(i.to_string(), t, if i % 2 == 0 { Label::Phishing } else { Label::Clean }, &alphabet, spec.seq_len))
        .collect();
    let mode = Mode::Train { seed: 11 };
    let loss_of = |m: &Model<f64>| -> f64 {
        let mut s = m.session().unwrap();
        batch
            .iter()
            .map(|e| {
                s.forward(e, mode).unwrap();
                s.backward(e.label).unwrap()
            })
            .sum()
    };
    // A central difference is only meaningful where the loss is smooth over
    // the probe interval; thresholded ReLU and max pooling have kinks. The
    // interval is smooth when steps h and h/4 agree, otherwise the next
    // initialization is tried.
    let mut last = Vec::new();
    for attempt in 0..16u64 {
        let init = seed + 1000 * attempt;
        let mut model = Model::<f64>::build(spec, init).unwrap();
        // Zero biases would park every pad position exactly on the kink.
        let mut rng = ChaCha8Rng::seed_from_u64(init ^ 0x5eed);
        for p in model.params_mut().iter_mut().filter(|p| p.value.shape().len() == 1) {
            p.value = Tensor::uniform(p.value.shape(), 0.5, &mut rng);
        }
        let mut s = model.session().unwrap();
        for e in &batch {
            s.forward(e, mode).unwrap();
            s.backward(e.label).unwrap();
        }
        let grads = s.gradients().unwrap();
        let mut probe = model.clone();
        let mut numeric = |h: f64| {
            check_numeric(model.params(), h, |p| {
                *probe.params_mut() = p.clone();
                loss_of(&probe)
            })
        };
        let coarse = numeric(DEFAULT_STEP);
        let fine = numeric(DEFAULT_STEP / 4.0);
        let smooth = coarse.iter().zip(&fine).all(|(a, b)| relative_error(a, b) < 1e-4);
        last = model
            .params()
            .ids()
            .zip(&coarse)
            .map(|(id, num)| {
                let p = model.params().param(id);
                let start = p.frozen_rows * p.value.cols();
                (format!("{}:{}", spec.kind, p.name), relative_error(&grads[id].data()[start..], num))
            })
            .collect();
        if smooth {
            break;
        }
    }
    last
}

/// Central differences of `loss` for every trainable entry, per tensor.
fn check_numeric(params: &ParamSet<f64>, h: f64, mut loss: impl FnMut(&ParamSet<f64>) -> f64) -> Vec<Vec<f64>> {
    let mut probe = params.clone();
    params
        .ids()
        .map(|id| {
            let p = params.param(id);
            let start = p.frozen_rows * p.value.cols();
            (start..p.value.len())
                .map(|i| {
                    let x = p.value.data()[i];
                    probe[id].data_mut()[i] = x + h;
                    let up = loss(&probe);
                    probe[id].data_mut()[i] = x - h;
                    let down = loss(&probe);
                    probe[id].data_mut()[i] = x;
                    (up - down) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

/// `(check name, relative error)` for every layer and every model tensor.
pub fn all_cases(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = layer_cases(&mut rng);
    for kind in ModelKind::ALL {
        out.extend(model_case(&tiny_spec(kind), seed));
    }
    let mut gru = NetworkSpec::chargru(12);
    gru.embed_dim = 4;
    gru.units = 3;
    out.extend(model_case(&gru, seed).into_iter().map(|(n, e)| (format!("T12D4H3/{n}"), e)));
    out
}
