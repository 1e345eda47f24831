//! CharCNN, CharGRU and CharBiLSTM built from a declarative [`NetworkSpec`].
//!
//! All three share the same outer shape: an embedding of the 96-row index
//! vocabulary, an architecture-specific body producing a `T' × K` feature
//! map (the *tap*), global average pooling over time and a dense 2-class
//! head. The tap is the layer Grad-CAM explains.
//!
//! The first layer after the embedding is always linear in the embedding
//! rows (a convolution for CharCNN, the input projections for the recurrent
//! models), so it runs through the fused lookup tables of
//! [`crate::nn::embed_conv_table`]. Build them once with [`Model::prepare`]
//! and reuse them for every sample until the parameters change.

mod checkpoint;

pub use checkpoint::{CheckpointMeta, ManifestEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncodedEmail, VOCAB_SIZE};
use crate::nn::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_mask, embed_conv_backward,
    embed_conv_finish, embed_conv_forward, embed_conv_table, global_avg_pool, global_avg_pool_backward, gru_backward,
    gru_forward, lstm_backward, lstm_forward, maxpool1d, maxpool1d_backward, se_backward, se_forward, softmax,
    softmax_cross_entropy_grad, thresholded_relu, thresholded_relu_backward, cross_entropy, GruCache, LstmCache,
    NnError, OptimizerKind, ParamId, ParamSet, Real, SeCache, Tensor, DEFAULT_THRESHOLD,
};
use crate::Label;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("cannot access {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checkpoint length mismatch: manifest declares {expected} bytes, file holds {actual}")]
    ManifestLength { expected: u64, actual: u64 },
    #[error("checkpoint metadata is invalid: {0}")]
    Metadata(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    CharCnn,
    CharGru,
    CharBiLstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::CharCnn, ModelKind::CharGru, ModelKind::CharBiLstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CharCnn => "charcnn",
            ModelKind::CharGru => "chargru",
            ModelKind::CharBiLstm => "charbilstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "charcnn" | "cnn" => Ok(ModelKind::CharCnn),
            "chargru" | "gru" => Ok(ModelKind::CharGru),
            "charbilstm" | "bilstm" => Ok(ModelKind::CharBiLstm),
            other => Err(format!("unknown model kind `{other}` (expected charcnn, chargru or charbilstm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default)]
    pub pool: Option<usize>,
    #[serde(default)]
    pub se_ratio: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: ModelKind,
    /// Input length `T`.
    pub seq_len: usize,
    pub embed_dim: usize,
    /// CharCNN only.
    #[serde(default)]
    pub conv_layers: Vec<ConvLayerSpec>,
    /// Hidden units per direction; recurrent models only.
    #[serde(default)]
    pub units: usize,
    /// Drop rate after each CharCNN activation.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub optimizer: OptimizerKind,
    /// Average only over non-pad timesteps.
    #[serde(default)]
    pub mask_padding: bool,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Temporal downsampling steps between the input characters and the tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemporalOp {
    /// Valid convolution of this width.
    Conv { kernel: usize },
    /// Non-overlapping max pooling.
    Pool { window: usize },
}

impl NetworkSpec {
    pub fn charcnn(seq_len: usize) -> Self {
        let layer = |kernel, pool| ConvLayerSpec { filters: 64, kernel, pool, se_ratio: Some(16) };
        Self {
            kind: ModelKind::CharCnn,
            seq_len,
            embed_dim: 128,
            conv_layers: vec![layer(5, Some(3)), layer(3, Some(3)), layer(1, None)],
            units: 0,
            dropout: 0.3,
            threshold: DEFAULT_THRESHOLD,
            optimizer: OptimizerKind::Nadam,
            mask_padding: false,
        }
    }

    pub fn chargru(seq_len: usize) -> Self {
        Self {
            kind: ModelKind::CharGru,
            seq_len,
            embed_dim: 128,
            conv_layers: Vec::new(),
            units: 64,
            dropout: 0.0,
            threshold: DEFAULT_THRESHOLD,
            optimizer: OptimizerKind::Adam,
            mask_padding: false,
        }
    }

    pub fn charbilstm(seq_len: usize) -> Self {
        Self { kind: ModelKind::CharBiLstm, embed_dim: 32, units: 32, ..Self::chargru(seq_len) }
    }

    /// Reference configuration for `kind`.
    pub fn preset(kind: ModelKind, seq_len: usize) -> Self {
        match kind {
            ModelKind::CharCnn => Self::charcnn(seq_len),
            ModelKind::CharGru => Self::chargru(seq_len),
            ModelKind::CharBiLstm => Self::charbilstm(seq_len),
        }
    }

    pub fn temporal_ops(&self) -> Vec<TemporalOp> {
        let mut ops = Vec::new();
        for l in &self.conv_layers {
            ops.push(TemporalOp::Conv { kernel: l.kernel });
            if let Some(w) = l.pool {
                ops.push(TemporalOp::Pool { window: w });
            }
        }
        ops
    }

    /// Length of the tap's time axis.
    pub fn tap_len(&self) -> usize {
        apply_temporal(&self.temporal_ops(), self.seq_len)
    }

    /// Channels of the tap.
    pub fn tap_channels(&self) -> usize {
        match self.kind {
            ModelKind::CharCnn => self.conv_layers.last().map_or(0, |l| l.filters),
            ModelKind::CharGru => self.units,
            ModelKind::CharBiLstm => 2 * self.units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.embed_dim == 0 || self.seq_len == 0 {
            return bad("seq_len and embed_dim must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite".into());
        }
        match self.kind {
            ModelKind::CharCnn => {
                if self.conv_layers.is_empty() {
                    return bad("charcnn needs at least one conv layer".into());
                }
                let mut t = self.seq_len;
                for (i, l) in self.conv_layers.iter().enumerate() {
                    if l.filters == 0 || l.kernel == 0 || l.pool == Some(0) {
                        return bad(format!("conv layer {}: filters, kernel and pool must be positive", i + 1));
                    }
                    if let Some(r) = l.se_ratio {
                        if r == 0 || l.filters % r != 0 {
                            return bad(format!("conv layer {}: SE ratio {r} does not divide {} filters", i + 1, l.filters));
                        }
                    }
                    if t < l.kernel {
                        return bad(format!("sequence too short for conv layer {}", i + 1));
                    }
                    t = t - l.kernel + 1;
                    if let Some(w) = l.pool {
                        if t < w {
                            return bad(format!("sequence too short for pooling after conv layer {}", i + 1));
                        }
                        t /= w;
                    }
                }
            }
            ModelKind::CharGru | ModelKind::CharBiLstm => {
                if self.units == 0 {
                    return bad("recurrent units must be at least 1".into());
                }
                if !self.conv_layers.is_empty() {
                    return bad(format!("{} takes no conv layers", self.kind));
                }
            }
        }
        Ok(())
    }
}

/// Length after running `len` timesteps through `ops`.
pub fn apply_temporal(ops: &[TemporalOp], len: usize) -> usize {
    ops.iter().fold(len, |t, op| match *op {
        TemporalOp::Conv { kernel } => t.saturating_sub(kernel - 1),
        TemporalOp::Pool { window } => t / window,
    })
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    kernel: ParamId,
    bias: ParamId,
    se: Option<[ParamId; 4]>,
}

/// `(w: D × G·H, b_in, u: H × G·H, b_rec)`.
#[derive(Debug, Clone, Copy)]
struct RnnIds {
    w: ParamId,
    b_in: ParamId,
    u: ParamId,
    b_rec: ParamId,
}

#[derive(Debug, Clone)]
enum Body {
    Cnn(Vec<ConvIds>),
    Gru(RnnIds),
    BiLstm(RnnIds, RnnIds),
}

#[derive(Debug, Clone)]
struct Layout {
    embed: ParamId,
    body: Body,
    dense_w: ParamId,
    dense_b: ParamId,
}

fn glorot<F: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

fn layout_for<F: Real>(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> (ParamSet<F>, Layout) {
    let mut ps = ParamSet::new();
    let d = spec.embed_dim;
    let mut table = Tensor::<F>::uniform(&[VOCAB_SIZE, d], 0.05, rng);
    table.row_mut(0).iter_mut().for_each(|v| *v = F::zero());
    let embed = ps.push_frozen("embedding", table, 1);
    let rnn = |ps: &mut ParamSet<F>, prefix: &str, gates: usize, rng: &mut ChaCha8Rng| {
        let h = spec.units;
        RnnIds {
            w: ps.push(format!("{prefix}.w"), glorot(&[d, gates * h], d, gates * h, rng)),
            b_in: ps.push(format!("{prefix}.b_in"), Tensor::zeros(&[gates * h])),
            u: ps.push(format!("{prefix}.u"), glorot(&[h, gates * h], h, gates * h, rng)),
            b_rec: ps.push(format!("{prefix}.b_rec"), Tensor::zeros(&[gates * h])),
        }
    };
    let body = match spec.kind {
        ModelKind::CharCnn => {
            let mut cin = d;
            let mut ids = Vec::new();
            for (i, l) in spec.conv_layers.iter().enumerate() {
                let n = i + 1;
                let (k, c) = (l.kernel, l.filters);
                let kernel = ps.push(format!("conv{n}.kernel"), glorot(&[k, cin, c], k * cin, k * c, rng));
                let bias = ps.push(format!("conv{n}.bias"), Tensor::zeros(&[c]));
                let se = l.se_ratio.map(|r| {
                    let m = c / r;
                    [
                        ps.push(format!("conv{n}.se.w1"), glorot(&[c, m], c, m, rng)),
                        ps.push(format!("conv{n}.se.b1"), Tensor::zeros(&[m])),
                        ps.push(format!("conv{n}.se.w2"), glorot(&[m, c], m, c, rng)),
                        ps.push(format!("conv{n}.se.b2"), Tensor::zeros(&[c])),
                    ]
                });
                ids.push(ConvIds { kernel, bias, se });
                cin = c;
            }
            Body::Cnn(ids)
        }
        ModelKind::CharGru => Body::Gru(rnn(&mut ps, "gru", 3, rng)),
        ModelKind::CharBiLstm => {
            let f = rnn(&mut ps, "lstm_fwd", 4, rng);
            Body::BiLstm(f, rnn(&mut ps, "lstm_bwd", 4, rng))
        }
    };
    let k = spec.tap_channels();
    let dense_w = ps.push("dense.w", glorot(&[k, 2], k, 2, rng));
    let dense_b = ps.push("dense.b", Tensor::zeros(&[2]));
    (ps, Layout { embed, body, dense_w, dense_b })
}

/// A built network: spec plus parameters. Immutable during inference and
/// safe to share across threads.
#[derive(Debug, Clone)]
pub struct Model<F: Real = f32> {
    spec: NetworkSpec,
    params: ParamSet<F>,
    layout: Layout,
}

/// Fused first-layer lookup tables, valid for the parameters they were
/// computed from.
#[derive(Debug, Clone)]
pub struct Prepared<F> {
    tables: Vec<Tensor<F>>,
}

/// Whether a forward pass is part of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active, masks drawn from this seed.
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
struct ConvTrace<F> {
    input: Option<Tensor<F>>,
    pre: Tensor<F>,
    mask: Option<Vec<F>>,
    pool: Option<(Vec<usize>, usize)>,
    se: Option<(Tensor<F>, SeCache<F>)>,
}

#[derive(Debug, Clone)]
enum BodyTrace<F> {
    Cnn(Vec<ConvTrace<F>>),
    Gru(GruCache<F>),
    BiLstm(Box<(LstmCache<F>, LstmCache<F>)>),
}

/// Everything one forward pass recorded for its backward pass.
#[derive(Debug, Clone)]
pub struct Trace<F> {
    indices: Vec<u8>,
    body: BodyTrace<F>,
    tap: Tensor<F>,
    valid: Option<usize>,
    pooled: Vec<F>,
    pub logits: Vec<F>,
    pub probs: [F; 2],
}

impl<F> Trace<F> {
    /// The tap feature map `T' × K`.
    pub fn tap(&self) -> &Tensor<F> {
        &self.tap
    }

    /// Rows of the tap that the pooling averages over.
    pub fn valid_rows(&self) -> Option<usize> {
        self.valid
    }
}

/// Gradient accumulator with the layout of the model parameters, plus the
/// fused-table buffers that [`Model::finish_grads`] contracts.
#[derive(Debug, Clone)]
pub struct GradBuffer<F> {
    grads: ParamSet<F>,
    fused: Vec<Tensor<F>>,
}

impl<F: Real> GradBuffer<F> {
    pub fn add_assign(&mut self, other: &Self) {
        self.grads.add_assign(&other.grads);
        for (a, b) in self.fused.iter_mut().zip(&other.fused) {
            a.add_assign(b);
        }
    }
}

fn take_cols<F: Real>(x: &Tensor<F>, from: usize, to: usize) -> Tensor<F> {
    let mut out = Tensor::zeros(&[x.rows(), to - from]);
    for t in 0..x.rows() {
        out.row_mut(t).copy_from_slice(&x.row(t)[from..to]);
    }
    out
}

impl<F: Real> Model<F> {
    /// Builds a model with seeded Glorot-uniform weights, zero biases and an
    /// embedding drawn from `±0.05` with a zero pad row.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, layout) = layout_for(spec, &mut rng);
        Ok(Self { spec: spec.clone(), params, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    /// Mutable parameters. Tables from an earlier [`Model::prepare`] are
    /// stale after any change.
    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    /// Trainable scalars; the frozen pad row is excluded.
    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model { spec: self.spec.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    fn first_layer_kernels(&self) -> Vec<ParamId> {
        match &self.layout.body {
            Body::Cnn(c) => vec![c[0].kernel],
            Body::Gru(g) => vec![g.w],
            Body::BiLstm(f, b) => vec![f.w, b.w],
        }
    }

    pub fn prepare(&self) -> Result<Prepared<F>> {
        let table = &self.params[self.layout.embed];
        let tables = self
            .first_layer_kernels()
            .into_iter()
            .map(|k| embed_conv_table(table, &self.params[k]))
            .collect::<Result<_, _>>()?;
        Ok(Prepared { tables })
    }

    pub fn grad_buffer(&self, prepared: &Prepared<F>) -> GradBuffer<F> {
        GradBuffer { grads: self.params.zeros_like(), fused: prepared.tables.iter().map(|t| Tensor::zeros(t.shape())).collect() }
    }

    /// Rows of the tap that the head averages over for an input whose first
    /// `length` characters are real.
    pub fn valid_rows(&self, length: usize) -> Option<usize> {
        self.spec.mask_padding.then(|| apply_temporal(&self.spec.temporal_ops(), length.max(1)).max(1))
    }

    fn check_input(&self, indices: &[u8]) -> Result<()> {
        if indices.len() != self.spec.seq_len {
            return Err(NnError::Shape(format!("input length {} vs model T = {}", indices.len(), self.spec.seq_len)).into());
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= VOCAB_SIZE) {
            return Err(NnError::IndexOutOfRange { index: bad as usize, rows: VOCAB_SIZE }.into());
        }
        Ok(())
    }

    /// Forward pass up to the tap.
    fn body_forward(&self, prep: &Prepared<F>, indices: &[u8], mode: Mode) -> Result<(Tensor<F>, BodyTrace<F>)> {
        let p = &self.params;
        match &self.layout.body {
            Body::Cnn(convs) => {
                let theta = F::lit(self.spec.threshold);
                let mut rng = match mode {
                    Mode::Train { seed } if self.spec.dropout > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
                    _ => None,
                };
                let mut x: Option<Tensor<F>> = None;
                let mut traces = Vec::with_capacity(convs.len());
                for (ls, ids) in self.spec.conv_layers.iter().zip(convs) {
                    let pre = match &x {
                        None => embed_conv_forward(indices, &prep.tables[0], &p[ids.bias])?,
                        Some(x) => conv1d_forward(x, &p[ids.kernel], &p[ids.bias])?,
                    };
                    let mut a = thresholded_relu(&pre, theta);
                    let mask = rng.as_mut().map(|rng| {
                        let m = dropout_mask::<F>(a.len(), self.spec.dropout, rng);
                        a.data_mut().iter_mut().zip(&m).for_each(|(v, &k)| *v *= k);
                        m
                    });
                    let pool = match ls.pool {
                        Some(w) => {
                            let rows = a.rows();
                            let (out, arg) = maxpool1d(&a, w)?;
                            a = out;
                            Some((arg, rows))
                        }
                        None => None,
                    };
                    let se = match ids.se {
                        Some([w1, b1, w2, b2]) => {
                            let (y, cache) = se_forward(&a, &p[w1], &p[b1], &p[w2], &p[b2])?;
                            Some((std::mem::replace(&mut a, y), cache))
                        }
                        None => None,
                    };
                    traces.push(ConvTrace { input: x.take(), pre, mask, pool, se });
                    x = Some(a);
                }
                Ok((x.expect("at least one conv layer"), BodyTrace::Cnn(traces)))
            }
            Body::Gru(g) => {
                let xp = embed_conv_forward(indices, &prep.tables[0], &p[g.b_in])?;
                let (hs, cache) = gru_forward(&xp, &p[g.u], &p[g.b_rec])?;
                Ok((hs, BodyTrace::Gru(cache)))
            }
            Body::BiLstm(f, b) => {
                let xf = embed_conv_forward(indices, &prep.tables[0], &p[f.b_in])?;
                let xb = embed_conv_forward(indices, &prep.tables[1], &p[b.b_in])?;
                let (hf, cf) = lstm_forward(&xf, &p[f.u], &p[f.b_rec], false)?;
                let (hb, cb) = lstm_forward(&xb, &p[b.u], &p[b.b_rec], true)?;
                Ok((crate::nn::concat_cols(&hf, &hb), BodyTrace::BiLstm(Box::new((cf, cb)))))
            }
        }
    }

    /// GAP + dense on a tap feature map; returns `(pooled, logits)`.
    pub fn head_forward(&self, tap: &Tensor<F>, valid: Option<usize>) -> (Vec<F>, Vec<F>) {
        let pooled = global_avg_pool(tap, valid);
        let logits = dense_forward(&pooled, &self.params[self.layout.dense_w], &self.params[self.layout.dense_b]);
        (pooled, logits)
    }

    /// Gradient of logit `class` with respect to the tap.
    pub fn head_grad(&self, tap: &Tensor<F>, valid: Option<usize>, class: Label) -> Tensor<F> {
        let w = &self.params[self.layout.dense_w];
        let dpooled: Vec<F> = (0..w.rows()).map(|k| w.row(k)[class.index()]).collect();
        global_avg_pool_backward(&dpooled, tap.rows(), valid)
    }

    /// Full forward pass of one encoded sequence, recording a trace.
    pub fn forward_trace(&self, prep: &Prepared<F>, indices: &[u8], length: usize, mode: Mode) -> Result<Trace<F>> {
        self.check_input(indices)?;
        let (tap, body) = self.body_forward(prep, indices, mode)?;
        let valid = self.valid_rows(length);
        let (pooled, logits) = self.head_forward(&tap, valid);
        let p = softmax(&logits);
        Ok(Trace { indices: indices.to_vec(), body, tap, valid, pooled, logits, probs: [p[0], p[1]] })
    }

    /// Class probabilities `[p_clean, p_phish]` for one email.
    pub fn predict_one(&self, prep: &Prepared<F>, email: &EncodedEmail) -> Result<[F; 2]> {
        Ok(self.forward_trace(prep, &email.indices, email.original_length, Mode::Inference)?.probs)
    }

    /// Inference over a batch, sharded across the rayon pool. Rows come
    /// back in input order.
    pub fn forward(&self, batch: &[EncodedEmail]) -> Result<Vec<[F; 2]>> {
        let prep = self.prepare()?;
        batch.par_iter().map(|e| self.predict_one(&prep, e)).collect()
    }

    /// Backpropagates `dlogits` through a recorded trace into `acc`.
    pub fn backward_trace(&self, trace: &Trace<F>, dlogits: &[F], acc: &mut GradBuffer<F>) -> Result<()> {
        let l = &self.layout;
        let p = &self.params;
        let g = &mut acc.grads;
        let dpooled = {
            let [dw, db] = g.many_mut([l.dense_w, l.dense_b]);
            dense_backward(&trace.pooled, &p[l.dense_w], dlogits, dw, db)
        };
        let dtap = global_avg_pool_backward(&dpooled, trace.tap.rows(), trace.valid);
        match (&l.body, &trace.body) {
            (Body::Cnn(convs), BodyTrace::Cnn(traces)) => {
                let theta = F::lit(self.spec.threshold);
                let mut dy = dtap;
                for (ids, tr) in convs.iter().zip(traces).rev() {
                    if let (Some((se_in, cache)), Some([w1, b1, w2, b2])) = (&tr.se, ids.se) {
                        dy = se_backward(se_in, cache, &dy, &p[w1], &p[w2], g.many_mut([w1, b1, w2, b2]));
                    }
                    if let Some((arg, rows)) = &tr.pool {
                        dy = maxpool1d_backward(&dy, arg, *rows);
                    }
                    if let Some(m) = &tr.mask {
                        dy.data_mut().iter_mut().zip(m).for_each(|(d, &k)| *d *= k);
                    }
                    thresholded_relu_backward(&tr.pre, &mut dy, theta);
                    match &tr.input {
                        None => embed_conv_backward(&trace.indices, &dy, &mut acc.fused[0], &mut g[ids.bias]),
                        Some(x) => {
                            let mut dx = Tensor::zeros(x.shape());
                            let [dk, db] = g.many_mut([ids.kernel, ids.bias]);
                            conv1d_backward(x, &p[ids.kernel], &dy, Some(&mut dx), dk, db)?;
                            dy = dx;
                        }
                    }
                }
            }
            (Body::Gru(ids), BodyTrace::Gru(cache)) => {
                let [du, db] = g.many_mut([ids.u, ids.b_rec]);
                let dxp = gru_backward(&p[ids.u], cache, &dtap, du, db);
                embed_conv_backward(&trace.indices, &dxp, &mut acc.fused[0], &mut g[ids.b_in]);
            }
            (Body::BiLstm(f, b), BodyTrace::BiLstm(caches)) => {
                let h = self.spec.units;
                for (dir, (ids, cache)) in [(f, &caches.0), (b, &caches.1)].into_iter().enumerate() {
                    let dh = take_cols(&dtap, dir * h, (dir + 1) * h);
                    let [du, db] = g.many_mut([ids.u, ids.b_rec]);
                    let dxp = lstm_backward(&p[ids.u], cache, &dh, du, db);
                    embed_conv_backward(&trace.indices, &dxp, &mut acc.fused[dir], &mut g[ids.b_in]);
                }
            }
            _ => return Err(NnError::Shape("trace does not belong to this model".into()).into()),
        }
        Ok(())
    }

    /// Contracts the fused-table gradients into embedding and first-layer
    /// kernel gradients and returns plain parameter gradients.
    pub fn finish_grads(&self, acc: GradBuffer<F>) -> Result<ParamSet<F>> {
        let GradBuffer { mut grads, fused } = acc;
        let embed = self.layout.embed;
        for (kid, dfused) in self.first_layer_kernels().into_iter().zip(&fused) {
            let [de, dk] = grads.many_mut([embed, kid]);
            embed_conv_finish(dfused, &self.params[embed], &self.params[kid], de, dk)?;
        }
        Ok(grads)
    }

    /// Forward and backward of the cross-entropy loss for one sample.
    /// Returns the loss.
    pub fn accumulate_loss_grad(
        &self,
        prep: &Prepared<F>,
        email: &EncodedEmail,
        mode: Mode,
        acc: &mut GradBuffer<F>,
    ) -> Result<F> {
        let trace = self.forward_trace(prep, &email.indices, email.original_length, mode)?;
        let target = email.label.index();
        let dlogits = softmax_cross_entropy_grad(&trace.probs, target);
        self.backward_trace(&trace, &dlogits, acc)?;
        let onehot = email.label_onehot().map(|v| F::lit(v as f64));
        Ok(cross_entropy(&trace.probs, &onehot))
    }

    /// Stateful forward/backward handle over one model.
    pub fn session(&self) -> Result<Session<'_, F>> {
        let prepared = self.prepare()?;
        let acc = self.grad_buffer(&prepared);
        Ok(Session { model: self, prepared, trace: None, acc })
    }
}

/// Records one forward pass at a time and backpropagates the loss of the
/// most recent one.
pub struct Session<'m, F: Real> {
    model: &'m Model<F>,
    prepared: Prepared<F>,
    trace: Option<Trace<F>>,
    acc: GradBuffer<F>,
}

impl<F: Real> Session<'_, F> {
    pub fn forward(&mut self, email: &EncodedEmail, mode: Mode) -> Result<[F; 2]> {
        let trace = self.model.forward_trace(&self.prepared, &email.indices, email.original_length, mode)?;
        let probs = trace.probs;
        self.trace = Some(trace);
        Ok(probs)
    }

    /// Backpropagates the cross-entropy against `target` for the last
    /// forward pass, which is consumed.
    pub fn backward(&mut self, target: Label) -> Result<F> {
        let trace = self.trace.take().ok_or(NnError::NoForward)?;
        let dlogits = softmax_cross_entropy_grad(&trace.probs, target.index());
        self.model.backward_trace(&trace, &dlogits, &mut self.acc)?;
        let onehot = crate::encoder::one_hot(target).map(|v| F::lit(v as f64));
        Ok(cross_entropy(&trace.probs, &onehot))
    }

    /// Accumulated parameter gradients.
    pub fn gradients(self) -> Result<ParamSet<F>> {
        self.model.finish_grads(self.acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Alphabet, EncodedEmail};
    use proptest::prelude::*;

    fn tiny(kind: ModelKind) -> NetworkSpec {
        let mut s = NetworkSpec::preset(kind, 16);
        s.embed_dim = 6;
        s.units = 4;
        if kind == ModelKind::CharCnn {
            s.conv_layers = vec![
                ConvLayerSpec { filters: 8, kernel: 3, pool: Some(2), se_ratio: Some(4) },
                ConvLayerSpec { filters: 8, kernel: 1, pool: None, se_ratio: Some(2) },
            ];
        }
        s
    }

    fn email(text: &str, t: usize) -> EncodedEmail {
        EncodedEmail::new("x", text, Label::Phishing, &Alphabet::default(), t)
    }

    #[test]
    fn chargru_reference_parameter_count() {
        let m = Model::<f32>::build(&NetworkSpec::chargru(1500), 42).unwrap();
        // 95 trainable embedding rows, two-bias GRU, 64×2 + 2 head.
        assert_eq!(m.param_count(), 95 * 128 + (128 * 192 + 192 + 64 * 192 + 192) + 130);
        assert!((m.param_count() as f64 - 49_700.0).abs() / 49_700.0 < 0.01);
    }

    #[test]
    fn dense_head_count() {
        let mut ps = ParamSet::<f32>::new();
        ps.push("w", Tensor::zeros(&[4, 2]));
        ps.push("b", Tensor::zeros(&[2]));
        assert_eq!(ps.trainable_count(), 10);
    }

    #[test]
    fn presets_have_reference_shapes() {
        let cnn = NetworkSpec::charcnn(1500);
        assert_eq!(cnn.conv_layers.iter().map(|l| (l.filters, l.kernel)).collect::<Vec<_>>(), vec![(64, 5), (64, 3), (64, 1)]);
        assert_eq!(cnn.optimizer, OptimizerKind::Nadam);
        let lstm = NetworkSpec::charbilstm(1500);
        assert_eq!((lstm.embed_dim, lstm.units, lstm.tap_channels()), (32, 32, 64));
        assert_eq!(NetworkSpec::chargru(1500).tap_len(), 1500);
        assert_eq!(cnn.tap_len(), ((1500 - 4) / 3 - 2) / 3);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = NetworkSpec::charcnn(100);
        s.conv_layers[0].se_ratio = Some(5);
        assert!(matches!(Model::<f32>::build(&s, 1), Err(ModelError::InvalidSpec(_))));
        let mut s = NetworkSpec::chargru(100);
        s.units = 0;
        assert!(Model::<f32>::build(&s, 1).is_err());
        let mut s = NetworkSpec::chargru(100);
        s.dropout = 1.0;
        assert!(Model::<f32>::build(&s, 1).is_err());
        assert!(Model::<f32>::build(&NetworkSpec::charcnn(6), 1).is_err());
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a = Model::<f32>::build(&NetworkSpec::chargru(20), 3).unwrap();
        let b = Model::<f32>::build(&NetworkSpec::chargru(20), 3).unwrap();
        let c = Model::<f32>::build(&NetworkSpec::chargru(20), 4).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        assert!(a.params()[a.layout.embed].row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_pad_input_is_finite() {
        for kind in ModelKind::ALL {
            let m = Model::<f32>::build(&tiny(kind), 0).unwrap();
            let p = m.forward(&[email("", 16)]).unwrap()[0];
            assert!(p.iter().all(|v| v.is_finite()));
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bilstm_tap_width_is_twice_units() {
        let m = Model::<f32>::build(&tiny(ModelKind::CharBiLstm), 0).unwrap();
        let prep = m.prepare().unwrap();
        let e = email("hello", 16);
        let tr = m.forward_trace(&prep, &e.indices, e.original_length, Mode::Inference).unwrap();
        assert_eq!(tr.tap().shape(), &[16, 8]);
    }

    #[test]
    fn backward_without_forward_fails() {
        let m = Model::<f32>::build(&tiny(ModelKind::CharGru), 0).unwrap();
        let mut s = m.session().unwrap();
        assert!(matches!(s.backward(Label::Clean), Err(ModelError::Nn(NnError::NoForward))));
        s.forward(&email("abc", 16), Mode::Inference).unwrap();
        assert!(s.backward(Label::Clean).is_ok());
        assert!(matches!(s.backward(Label::Clean), Err(ModelError::Nn(NnError::NoForward))));
    }

    #[test]
    fn wrong_length_and_bad_index_are_errors() {
        let m = Model::<f32>::build(&tiny(ModelKind::CharGru), 0).unwrap();
        let prep = m.prepare().unwrap();
        assert!(m.forward_trace(&prep, &[1; 15], 15, Mode::Inference).is_err());
        let mut idx = vec![1u8; 16];
        idx[3] = 200;
        assert!(matches!(
            m.forward_trace(&prep, &idx, 16, Mode::Inference),
            Err(ModelError::Nn(NnError::IndexOutOfRange { index: 200, .. }))
        ));
    }

    #[test]
    fn masking_shrinks_the_pooled_rows() {
        let mut s = tiny(ModelKind::CharCnn);
        s.mask_padding = true;
        let m = Model::<f32>::build(&s, 0).unwrap();
        // 10 chars → conv3 → 8 → pool2 → 4 → conv1 → 4.
        assert_eq!(m.valid_rows(10), Some(4));
        assert_eq!(m.valid_rows(0), Some(1));
    }

    #[test]
    fn dropout_only_in_training() {
        let m = Model::<f32>::build(&tiny(ModelKind::CharCnn), 0).unwrap();
        let prep = m.prepare().unwrap();
        let e = email("click here now http://x", 16);
        let a = m.forward_trace(&prep, &e.indices, 16, Mode::Inference).unwrap().probs;
        let b = m.forward_trace(&prep, &e.indices, 16, Mode::Inference).unwrap().probs;
        assert_eq!(a, b);
        let t1 = m.forward_trace(&prep, &e.indices, 16, Mode::Train { seed: 1 }).unwrap().probs;
        let t1b = m.forward_trace(&prep, &e.indices, 16, Mode::Train { seed: 1 }).unwrap().probs;
        assert_eq!(t1, t1b);
    }

    proptest! {
        #[test]
        fn batch_equals_per_sample(texts in proptest::collection::vec("[ -~]{0,20}", 1..6), kind in 0usize..3) {
            let m = Model::<f32>::build(&tiny(ModelKind::ALL[kind]), 5).unwrap();
            let batch: Vec<EncodedEmail> = texts.iter().map(|t| email(t, 16)).collect();
            let all = m.forward(&batch).unwrap();
            for (e, row) in batch.iter().zip(&all) {
                let one = m.forward(std::slice::from_ref(e)).unwrap()[0];
                prop_assert_eq!(one, *row);
                prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-6 && row[0] >= 0.0 && row[1] >= 0.0);
            }
        }
    }
}
