//! Character-level Grad-CAM.
//!
//! For a target class `c` with logit `y_c` and a tap feature map `A: T' × K`:
//!
//! ```text
//! α_k  = (Σ_t ∂y_c/∂A[t,k]) / T'
//! L(t) = max(0, Σ_k α_k · A[t,k])
//! ```
//!
//! Scores are mapped back to characters by nearest-neighbour fan-out through
//! the convolutions and poolings between the input and the tap, scaled to
//! `[0, 1]` with a zero floor, and rendered as a red-background HTML page.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Alphabet, EncodedEmail};
use crate::models::{apply_temporal, Mode, Model, ModelError, ModelKind, TemporalOp};
use crate::nn::{Real, Tensor};
use crate::Label;

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error("layer {layer:?} is not present in a {kind} model")]
    LayerUnavailable { layer: LayerTag, kind: ModelKind },
    #[error("activation {activation:?} and gradient {gradient:?} shapes differ")]
    ShapeMismatch { activation: Vec<usize>, gradient: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot write {path}: {source}")]
    Unwritable { path: std::path::PathBuf, source: std::io::Error },
}

pub type Result<T, E = GradCamError> = std::result::Result<T, E>;

/// Layers that can be explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerTag {
    /// Output of the last convolutional block of CharCNN.
    FinalConvBlock,
    /// Hidden-state sequence of CharGRU / CharBiLSTM.
    RecurrentOutput,
}

impl LayerTag {
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::CharCnn => LayerTag::FinalConvBlock,
            ModelKind::CharGru | ModelKind::CharBiLstm => LayerTag::RecurrentOutput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    /// Per-timestep relevance at the explained layer, all `>= 0`.
    pub scores: Vec<f64>,
    /// Per-character intensity in `[0, 1]`.
    pub aligned_scores: Vec<f64>,
    pub target_class: Label,
    pub layer_tag: LayerTag,
}

/// Temporal downsampling between input characters and the explained layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingTrace {
    pub input_len: usize,
    pub ops: Vec<TemporalOp>,
}

impl PoolingTrace {
    /// No downsampling: one step per character.
    pub fn identity(input_len: usize) -> Self {
        Self { input_len, ops: Vec::new() }
    }

    pub fn for_model<F: Real>(model: &Model<F>) -> Self {
        Self { input_len: model.spec().seq_len, ops: model.spec().temporal_ops() }
    }

    /// Layer step that character `i` falls into.
    pub fn step_of(&self, i: usize) -> usize {
        let mut len = self.input_len;
        let mut pos = i;
        for op in &self.ops {
            let out = apply_temporal(std::slice::from_ref(op), len);
            pos = match *op {
                TemporalOp::Conv { kernel } => pos.saturating_sub((kernel - 1) / 2),
                TemporalOp::Pool { window } => pos / window,
            }
            .min(out.saturating_sub(1));
            len = out;
        }
        pos
    }
}

/// Tap activations and `∂y_c/∂A` for one email, with `y_c` the pre-softmax
/// logit. Also returns the class probabilities.
pub fn activations_and_grads<F: Real>(
    model: &Model<F>,
    email: &EncodedEmail,
    class: Label,
    layer: LayerTag,
) -> Result<(Tensor<F>, Tensor<F>, [F; 2])> {
    if layer != LayerTag::for_kind(model.kind()) {
        return Err(GradCamError::LayerUnavailable { layer, kind: model.kind() });
    }
    let prep = model.prepare()?;
    let trace = model.forward_trace(&prep, &email.indices, email.original_length, Mode::Inference)?;
    let grads = model.head_grad(trace.tap(), trace.valid_rows(), class);
    Ok((trace.tap().clone(), grads, trace.probs))
}

/// Channel weights by time-averaged gradients, then the rectified weighted
/// sum over channels.
pub fn relevance(activations: &Tensor<f64>, grads: &Tensor<f64>) -> Result<Vec<f64>> {
    if activations.shape() != grads.shape() {
        return Err(GradCamError::ShapeMismatch {
            activation: activations.shape().to_vec(),
            gradient: grads.shape().to_vec(),
        });
    }
    let (t_len, k_len) = (activations.rows(), activations.cols());
    let mut alpha = vec![0.0; k_len];
    for (k, a) in alpha.iter_mut().enumerate() {
        let mut s = 0.0;
        for t in 0..t_len {
            s += grads.at(t, k);
        }
        *a = s / t_len as f64;
    }
    Ok((0..t_len)
        .map(|t| {
            let mut s = 0.0;
            for (k, &a) in alpha.iter().enumerate() {
                s += a * activations.at(t, k);
            }
            s.max(0.0)
        })
        .collect())
}

/// Nearest-neighbour upsampling to the first `min(original_length, T)`
/// characters, scaled by the maximum so the zero level stays at zero.
pub fn align_and_normalize(scores: &[f64], original_length: usize, trace: &PoolingTrace) -> Vec<f64> {
    let n = original_length.min(trace.input_len);
    if scores.is_empty() {
        return vec![0.0; n];
    }
    let raw: Vec<f64> = (0..n).map(|i| scores[trace.step_of(i).min(scores.len() - 1)].max(0.0)).collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        raw.into_iter().map(|v| v / max).collect()
    } else {
        raw
    }
}

/// A complete explanation of one email.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// The characters that were scored.
    pub text: String,
    pub map: RelevanceMap,
    pub predicted: Label,
    /// `[p_clean, p_phish]`.
    pub probs: [f64; 2],
}

/// Explains `text` for `target`, or for the predicted class when `None`.
pub fn explain<F: Real>(model: &Model<F>, alphabet: &Alphabet, text: &str, target: Option<Label>) -> Result<Explanation> {
    let t = model.spec().seq_len;
    let email = EncodedEmail::new("explain", text, Label::Clean, alphabet, t);
    let layer = LayerTag::for_kind(model.kind());
    let (_, _, probs) = activations_and_grads(model, &email, Label::Clean, layer)?;
    let probs = probs.map(Real::as_f64);
    let predicted = if probs[1] > probs[0] { Label::Phishing } else { Label::Clean };
    let class = target.unwrap_or(predicted);
    let (a, g, _) = activations_and_grads(model, &email, class, layer)?;
    let scores = relevance(&a.cast(), &g.cast())?;
    let aligned_scores = align_and_normalize(&scores, email.original_length, &PoolingTrace::for_model(model));
    Ok(Explanation {
        text: text.chars().take(aligned_scores.len()).collect(),
        map: RelevanceMap { scores, aligned_scores, target_class: class, layer_tag: layer },
        predicted,
        probs,
    })
}

fn escape_char(c: char, out: &mut String) {
    match c {
        '&' => out.push_str("&amp;"),
        '<' => out.push_str("&lt;"),
        '>' => out.push_str("&gt;"),
        '"' => out.push_str("&quot;"),
        '\'' => out.push_str("&#39;"),
        '\t' | '\n' | '\r' => out.push(c),
        c if (c as u32) < 0x20 || (c as u32) == 0x7F || ('\u{80}'..='\u{9F}').contains(&c) => out.push('\u{FFFD}'),
        c => out.push(c),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    s.chars().for_each(|c| escape_char(c, &mut out));
    out
}

/// Alpha channel written for a normalized score; three decimals keep every
/// 8-bit intensity level distinct.
pub fn alpha_string(score: f64) -> String {
    format!("{:.3}", score.clamp(0.0, 1.0))
}

/// Standalone XHTML-compatible page with one span per scored character.
/// `footer` is rendered below the text, typically the config digest.
pub fn html_string(text: &str, aligned_scores: &[f64], predicted: Label, probs: [f64; 2], footer: &str) -> String {
    let mut body = String::new();
    for (c, &s) in text.chars().zip(aligned_scores) {
        let _ = write!(body, "<span style=\"background-color: rgba(255,0,0,{})\">", alpha_string(s));
        escape_char(c, &mut body);
        body.push_str("</span>");
    }
    format!(
        "<!DOCTYPE html>\n<html xmlns=\"http://www.w3.org/1999/xhtml\">\n<head>\n<meta charset=\"utf-8\" />\n\
         <title>charphish explanation</title>\n</head>\n<body style=\"font-family: monospace\">\n\
         <div class=\"header\">\n<p>prediction: <strong>{}</strong></p>\n<p>p_clean = {:.6}, p_phish = {:.6}</p>\n</div>\n\
         <div class=\"email\" style=\"white-space: pre-wrap\">{}</div>\n<p class=\"footer\">{}</p>\n</body>\n</html>\n",
        predicted,
        probs[0],
        probs[1],
        body,
        escape(footer)
    )
}

pub fn render_html(explanation: &Explanation, footer: &str, path: &Path) -> Result<()> {
    let html = html_string(&explanation.text, &explanation.map.aligned_scores, explanation.predicted, explanation.probs, footer);
    fs::write(path, html).map_err(|source| GradCamError::Unwritable { path: path.to_path_buf(), source })
}
