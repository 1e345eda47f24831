use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, PipelineError, Result};
use crate::attack::{perturb_corpus, AttackMode, CampaignConfig, Oracle};
use crate::encoder::{Alphabet, EncodedEmail, EncoderConfig};
use crate::models::{CheckpointMeta, Mode, Model};
use crate::nn::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::{CorpusSplit, Label, RawEmail};

/// Samples whose gradients one worker accumulates before the ordered
/// reduction. Fixed, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub enabled: bool,
    /// Share of the phishing training emails that get a perturbed copy.
    pub fraction: f64,
    pub epsilon: f64,
    pub mode: AttackMode,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self { enabled: false, fraction: 0.4, epsilon: 0.2, mode: AttackMode::Random }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `None` uses the optimizer of the network spec.
    pub optimizer: Option<OptimizerKind>,
    pub seed: u64,
    pub adversarial: AdversarialConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.001,
            optimizer: None,
            seed: crate::DEFAULT_SEED,
            adversarial: AdversarialConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate {} is not a nonnegative number", self.learning_rate));
        }
        let a = &self.adversarial;
        if a.enabled && !(a.fraction > 0.0 && a.fraction <= 1.0) {
            return bad(format!("adversarial fraction {} outside (0, 1]", a.fraction));
        }
        if a.enabled && !(a.epsilon > 0.0 && a.epsilon <= 1.0) {
            return bad(format!("adversarial epsilon {} outside (0, 1]", a.epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    /// Parameters at the epoch with the highest validation accuracy (the
    /// earliest on ties); the final model when there is no validation set.
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub steps: usize,
    pub train_size: usize,
}

/// Where and under which name checkpoints are written.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub dir: PathBuf,
    pub stem: String,
    pub config_digest: String,
}

impl CheckpointSink {
    pub fn final_path(&self) -> PathBuf {
        self.dir.join(format!("{}-final.cpnn", self.stem))
    }

    pub fn best_path(&self) -> PathBuf {
        self.dir.join(format!("{}-best.cpnn", self.stem))
    }
}

/// Encodes emails into the text the model sees.
pub fn encode_all(emails: &[RawEmail], encoder: &EncoderConfig, alphabet: &Alphabet) -> Vec<EncodedEmail> {
    emails
        .par_iter()
        .map(|e| EncodedEmail::new(e.id.clone(), &encoder.model_text(&e.subject, &e.body), e.label, alphabet, encoder.max_len))
        .collect()
}

fn accuracy(model: &Model<f32>, set: &[EncodedEmail]) -> Result<f64> {
    let probs = model.forward(set)?;
    let hits = probs.iter().zip(set).filter(|(p, e)| (p[1] > p[0]) == (e.label == Label::Phishing)).count();
    Ok(hits as f64 / set.len() as f64)
}

fn save(model: &Model<f32>, path: &Path, digest: &str, epoch: usize, seed: u64) -> Result<()> {
    let meta = CheckpointMeta { config_digest: digest.to_string(), epoch, seed, ..CheckpointMeta::default() };
    Ok(model.save(path, &meta)?)
}

/// Mini-batch training with the cross-entropy loss.
pub fn train(
    model: Model<f32>,
    split: &CorpusSplit,
    config: &TrainConfig,
    encoder: &EncoderConfig,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome> {
    train_on(model, &split.train, &split.validation, config, encoder, sink)
}

/// Train emails plus perturbed copies of a seeded share of the phishing
/// ones. Originals stay in the set.
pub fn augment(
    train: &[RawEmail],
    adversarial: &AdversarialConfig,
    encoder: &EncoderConfig,
    seed: u64,
    oracle: Option<&dyn Oracle>,
) -> Result<Vec<RawEmail>> {
    if !train.iter().any(|e| e.label == Label::Phishing) {
        return Err(PipelineError::NoPhishing);
    }
    let campaign =
        CampaignConfig { epsilon: adversarial.epsilon, fraction: adversarial.fraction, mode: adversarial.mode, seed };
    let include_subject = encoder.include_subject;
    let prefix = move |e: &RawEmail| if include_subject { format!("{}\n", e.subject) } else { String::new() };
    let perturbed = perturb_corpus(oracle, train, &campaign, prefix)?;
    let mut out = train.to_vec();
    out.extend(perturbed.into_iter().map(|p| p.email));
    Ok(out)
}

/// Training on the train split augmented by [`augment`]; validation and
/// test are untouched. Guided augmentation queries `oracle`.
pub fn train_adversarial(
    model: Model<f32>,
    split: &CorpusSplit,
    config: &TrainConfig,
    encoder: &EncoderConfig,
    oracle: Option<&dyn Oracle>,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train = if config.adversarial.enabled && config.adversarial.fraction > 0.0 {
        augment(&split.train, &config.adversarial, encoder, derive_seed(&[config.seed, 0xAD]), oracle)?
    } else {
        split.train.clone()
    };
    train_on(model, &train, &split.validation, config, encoder, sink)
}

fn train_on(
    mut model: Model<f32>,
    train: &[RawEmail],
    validation: &[RawEmail],
    config: &TrainConfig,
    encoder: &EncoderConfig,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(PipelineError::EmptySet("train"));
    }
    if model.spec().seq_len != encoder.max_len {
        return Err(PipelineError::LengthMismatch { model: model.spec().seq_len, encoder: encoder.max_len });
    }
    let alphabet = Alphabet::default();
    let data = encode_all(train, encoder, &alphabet);
    let val = encode_all(validation, encoder, &alphabet);
    let kind = config.optimizer.unwrap_or(model.spec().optimizer);
    let mut opt = OptimizerState::new(OptimizerConfig::new(kind, config.learning_rate), model.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut steps = 0;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let prep = model.prepare()?;
            let parts = batch
                .par_chunks(GRAD_CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut acc = model.grad_buffer(&prep);
                    let mut loss = 0.0f64;
                    for (j, &i) in chunk.iter().enumerate() {
                        let seed = derive_seed(&[config.seed, epoch as u64, b as u64, (c * GRAD_CHUNK + j) as u64]);
                        loss += model.accumulate_loss_grad(&prep, &data[i], Mode::Train { seed }, &mut acc)? as f64;
                    }
                    Ok((acc, loss))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut parts = parts.into_iter();
            let (mut acc, mut loss) = parts.next().expect("nonempty batch");
            for (a, l) in parts {
                acc.add_assign(&a);
                loss += l;
            }
            if !loss.is_finite() {
                return Err(PipelineError::NonFiniteLoss {
                    loss,
                    epoch,
                    batch: b,
                    learning_rate: config.learning_rate,
                });
            }
            let mut grads = model.finish_grads(acc)?;
            grads.scale(1.0 / batch.len() as f32);
            opt.step(model.params_mut(), &grads);
            loss_sum += loss;
            steps += 1;
        }
        let val_accuracy = if val.is_empty() { None } else { Some(accuracy(&model, &val)?) };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            val_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}/{}: loss {:.4}, val acc {}",
            model.kind(),
            config.epochs,
            entry.train_loss,
            val_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
        log.push(entry);
        let score = val_accuracy.unwrap_or(f64::NEG_INFINITY);
        if score > best.2 || (val.is_empty() && epoch == config.epochs) {
            best = (model.clone(), epoch, score);
            if let Some(s) = sink {
                save(&model, &s.best_path(), &s.config_digest, epoch, config.seed)?;
            }
        }
    }
    if let Some(s) = sink {
        save(&model, &s.final_path(), &s.config_digest, config.epochs, config.seed)?;
    }
    Ok(TrainOutcome { model, best: best.0, best_epoch: best.1, log, steps, train_size: data.len() })
}

/// Per-epoch log as CSV: `epoch,train_loss,val_accuracy,seconds`.
pub fn write_epoch_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let io = |e: csv::Error| PipelineError::Io { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for e in log {
        w.serialize(e).map_err(io)?;
    }
    w.flush().map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitRatios;
    use crate::fixtures::{generate_emails, SyntheticSpec};
    use crate::models::{ModelKind, NetworkSpec};
    use crate::CorpusStore;

    fn small_gru(t: usize) -> Model<f32> {
        let mut s = NetworkSpec::preset(ModelKind::CharGru, t);
        s.embed_dim = 16;
        s.units = 8;
        Model::build(&s, 3).unwrap()
    }

    fn toy_split(n: usize, t: usize) -> CorpusSplit {
        let store = CorpusStore::from_emails(generate_emails(&SyntheticSpec::with_samples(n, t, 5)).unwrap());
        CorpusSplit::new(&store, SplitRatios::default(), 1).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 16, learning_rate: 0.01, ..TrainConfig::default() }
    }

    #[test]
    fn loss_decreases_and_steps_are_counted() {
        let split = toy_split(200, 64);
        let enc = EncoderConfig { max_len: 64, include_subject: true };
        let out = train(small_gru(64), &split, &cfg(3), &enc, None).unwrap();
        assert_eq!(out.steps, 3 * split.train.len().div_ceil(16));
        let l: Vec<f64> = out.log.iter().map(|e| e.train_loss).collect();
        assert!(l[0] > l[1] && l[1] > l[2], "{l:?}");
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let split = toy_split(40, 64);
        let enc = EncoderConfig { max_len: 64, include_subject: true };
        let m = small_gru(64);
        let out = train(m.clone(), &split, &TrainConfig { learning_rate: 0.0, ..cfg(1) }, &enc, None).unwrap();
        assert_eq!(out.model.params(), m.params());
    }

    #[test]
    fn repeatable() {
        let split = toy_split(40, 64);
        let enc = EncoderConfig { max_len: 64, include_subject: true };
        let strip = |o: TrainOutcome| (o.model.params().clone(), o.log.into_iter().map(|e| (e.train_loss, e.val_accuracy)).collect::<Vec<_>>());
        let a = strip(train(small_gru(64), &split, &cfg(2), &enc, None).unwrap());
        let b = strip(train(small_gru(64), &split, &cfg(2), &enc, None).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn augmentation_size_and_labels() {
        let split = toy_split(200, 64);
        let enc = EncoderConfig { max_len: 64, include_subject: true };
        let p = split.train.iter().filter(|e| e.label == Label::Phishing).count();
        let adv = AdversarialConfig { enabled: true, ..AdversarialConfig::default() };
        let aug = augment(&split.train, &adv, &enc, 1, None).unwrap();
        assert_eq!(aug.len(), split.train.len() + (0.4 * p as f64).round() as usize);
        assert!(aug[split.train.len()..].iter().all(|e| e.label == Label::Phishing));
        let clean: Vec<RawEmail> = split.train.iter().filter(|e| e.label == Label::Clean).cloned().collect();
        assert!(matches!(augment(&clean, &adv, &enc, 1, None), Err(PipelineError::NoPhishing)));
    }

    #[test]
    fn checkpoints_and_csv_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let split = toy_split(40, 64);
        let enc = EncoderConfig { max_len: 64, include_subject: true };
        let sink = CheckpointSink { dir: dir.path().into(), stem: "gru".into(), config_digest: "d".into() };
        let out = train(small_gru(64), &split, &cfg(2), &enc, Some(&sink)).unwrap();
        let (m, meta) = Model::load(&sink.final_path()).unwrap();
        assert_eq!(m.params(), out.model.params());
        assert_eq!((meta.epoch, meta.config_digest.as_str()), (2, "d"));
        assert!(sink.best_path().exists());
        let csv_path = dir.path().join("log.csv");
        write_epoch_csv(&csv_path, &out.log).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_accuracy,seconds\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn exploding_learning_rate_is_reported() {
        let split = toy_split(40, 64);
        let enc = EncoderConfig { max_len: 64, include_subject: true };
        let r = train(small_gru(64), &split, &TrainConfig { learning_rate: f64::MAX, ..cfg(3) }, &enc, None);
        assert!(matches!(r, Err(PipelineError::NonFiniteLoss { .. })), "{r:?}");
    }
}
