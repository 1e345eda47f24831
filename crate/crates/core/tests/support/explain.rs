//! A small fixture-trained model and the peak-span rule used to check that
//! heatmaps point at planted motifs.

use std::ops::Range;

use charphish::corpus::SplitRatios;
use charphish::encoder::EncoderConfig;
use charphish::fixtures::{generate, SyntheticEmail, SyntheticSpec};
use charphish::gradcam::explain;
use charphish::pipeline::{train, TrainConfig};
use charphish::{Alphabet, CorpusSplit, CorpusStore, Label, Model, ModelKind, NetworkSpec};

pub const SEQ_LEN: usize = 200;

pub fn encoder() -> EncoderConfig {
    EncoderConfig { max_len: SEQ_LEN, include_subject: true }
}

/// A model trained on a small synthetic corpus, with the synthetic test
/// emails (motif positions included).
pub fn trained_fixture_model(kind: ModelKind, n_samples: usize, epochs: usize, seed: u64) -> (Model<f32>, Vec<SyntheticEmail>) {
    let synthetic = generate(&SyntheticSpec::with_samples(n_samples, SEQ_LEN, seed)).unwrap();
    let store = CorpusStore::from_emails(synthetic.iter().map(|s| s.email.clone()));
    let split = CorpusSplit::new(&store, SplitRatios::default(), seed).unwrap();
    let config = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let model = Model::build(&NetworkSpec::preset(kind, SEQ_LEN), seed).unwrap();
    let outcome = train(model, &split, &config, &encoder(), None).unwrap();
    let test: Vec<SyntheticEmail> =
        split.test.iter().map(|e| synthetic.iter().find(|s| s.email.id == e.id).unwrap().clone()).collect();
    (outcome.model, test)
}

/// The contiguous run of characters at half the peak intensity or more that
/// contains the peak.
pub fn peak_span(scores: &[f64]) -> Range<usize> {
    let (peak, &top) = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty map");
    let hot = |i: usize| scores[i] >= 0.5 * top;
    let start = (0..peak).rev().take_while(|&i| hot(i)).last().unwrap_or(peak);
    let end = (peak + 1..scores.len()).take_while(|&i| hot(i)).last().map_or(peak + 1, |i| i + 1);
    start..end
}

pub fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Whether the peak span of the phishing explanation of `email` overlaps
/// one of its planted phishing motifs.
pub fn peak_hits_motif(model: &Model<f32>, email: &SyntheticEmail) -> bool {
    let text = encoder().model_text(&email.email.subject, &email.email.body);
    let exp = explain(model, &Alphabet::default(), &text, Some(Label::Phishing)).unwrap();
    let span = peak_span(&exp.map.aligned_scores);
    email.model_spans(&encoder()).iter().any(|m| overlaps(&span, m))
}
