use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, Confusion, Metrics};
use super::train::{encode_all, train, train_adversarial, CheckpointSink, EpochLog, TrainConfig};
use super::{PipelineError, Result};
use crate::attack::{perturb_corpus, AttackMode, CampaignConfig, ModelOracle, Oracle};
use crate::encoder::{Alphabet, EncoderConfig};
use crate::models::{Model, ModelKind, NetworkSpec};
use crate::{CorpusSplit, Label, RawEmail};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "clean/clean")]
    CleanClean,
    #[serde(rename = "clean/adv")]
    CleanAdv,
    #[serde(rename = "adv/adv")]
    AdvAdv,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::CleanClean, Scenario::CleanAdv, Scenario::AdvAdv];

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::CleanClean => "clean/clean",
            Scenario::CleanAdv => "clean/adv",
            Scenario::AdvAdv => "adv/adv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointChoice {
    Final,
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub scenario: Scenario,
    pub checkpoint: CheckpointChoice,
    pub n_samples: u64,
    pub confusion: Confusion,
    pub metrics: Metrics,
    /// Wall clock of the sequential batch-1 pass divided by the sample
    /// count.
    pub seconds_per_sample: f64,
    pub config_digest: String,
}

/// Scores `emails` one at a time on the calling thread and times the pass.
pub fn evaluate(
    model: &Model<f32>,
    emails: &[RawEmail],
    encoder: &EncoderConfig,
    scenario: Scenario,
    checkpoint: CheckpointChoice,
    config_digest: &str,
) -> Result<EvalReport> {
    if emails.is_empty() {
        return Err(PipelineError::EmptySet("evaluate"));
    }
    if model.spec().seq_len != encoder.max_len {
        return Err(PipelineError::LengthMismatch { model: model.spec().seq_len, encoder: encoder.max_len });
    }
    let encoded = encode_all(emails, encoder, &Alphabet::default());
    let prep = model.prepare()?;
    let start = Instant::now();
    let mut pairs = Vec::with_capacity(encoded.len());
    for e in &encoded {
        let p = model.predict_one(&prep, e)?;
        pairs.push((e.label, if p[1] > p[0] { Label::Phishing } else { Label::Clean }));
    }
    let seconds = start.elapsed().as_secs_f64();
    let confusion = confusion(pairs);
    Ok(EvalReport {
        model: model.kind(),
        scenario,
        checkpoint,
        n_samples: encoded.len() as u64,
        confusion,
        metrics: Metrics::from_confusion(&confusion)?,
        seconds_per_sample: seconds / encoded.len() as f64,
        config_digest: config_digest.to_string(),
    })
}

/// Test set with every phishing email replaced by its perturbed version.
/// Clean emails pass through unchanged and order is preserved.
pub fn adversarial_test_set(
    test: &[RawEmail],
    campaign: &CampaignConfig,
    encoder: &EncoderConfig,
    oracle: Option<&dyn Oracle>,
) -> Result<Vec<RawEmail>> {
    let include_subject = encoder.include_subject;
    let prefix = move |e: &RawEmail| if include_subject { format!("{}\n", e.subject) } else { String::new() };
    let campaign = CampaignConfig { fraction: 1.0, ..*campaign };
    let perturbed = perturb_corpus(oracle, test, &campaign, prefix)?;
    let mut by_id: std::collections::HashMap<String, RawEmail> =
        perturbed.into_iter().map(|p| (p.original_id, p.email)).collect();
    Ok(test.iter().map(|e| by_id.remove(&e.id).unwrap_or_else(|| e.clone())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    /// Attack settings for the perturbed test split. Its fraction is
    /// ignored: every phishing test email is perturbed.
    pub test_attack: CampaignConfig,
    /// Seed of the weight initialization.
    pub model_seed: u64,
    pub checkpoint: CheckpointChoice,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig { adversarial: super::AdversarialConfig { enabled: true, ..Default::default() }, ..Default::default() },
            encoder: EncoderConfig::default(),
            test_attack: CampaignConfig { epsilon: 0.1, fraction: 1.0, mode: AttackMode::Random, seed: crate::DEFAULT_SEED },
            model_seed: crate::DEFAULT_SEED,
            checkpoint: CheckpointChoice::Final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub model: ModelKind,
    /// `clean` or `adversarial`.
    pub regime: String,
    pub train_size: usize,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config_digest: String,
    pub config: ScenarioConfig,
    pub rows: Vec<EvalReport>,
    pub training: Vec<TrainingRecord>,
}

impl ScenarioReport {
    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.seconds_per_sample = 0.0;
        }
        for t in &mut r.training {
            for e in &mut t.log {
                e.seconds = 0.0;
            }
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, model: ModelKind, scenario: Scenario) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.model == model && r.scenario == scenario)
    }

    /// Aligned plain-text table, one row per (model, scenario).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = ["model", "scenario", "accuracy", "prec(w)", "prec(m)", "rec(w)", "rec(m)", "f1(w)", "f1(m)", "s/sample"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let m = &r.metrics;
            let mut cells = vec![r.model.to_string(), r.scenario.tag().to_string()];
            for v in [
                m.accuracy,
                m.precision.weighted,
                m.precision.macro_avg,
                m.recall.weighted,
                m.recall.macro_avg,
                m.f1.weighted,
                m.f1.macro_avg,
            ] {
                cells.push(format!("{v:.5}"));
            }
            cells.push(format!("{:.6}", r.seconds_per_sample));
            rows.push(cells);
        }
        let widths: Vec<usize> = (0..header.len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| if c < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out
    }
}

/// Trains a clean and an adversarially trained model per spec and evaluates
/// the three scenarios. With `checkpoint_dir`, checkpoints are written there
/// as `{kind}-{clean,adv}-{final,best}.cpnn`.
pub fn run_scenarios(
    specs: &[NetworkSpec],
    split: &CorpusSplit,
    config: &ScenarioConfig,
    config_digest: &str,
    checkpoint_dir: Option<&Path>,
) -> Result<ScenarioReport> {
    if split.test.is_empty() {
        return Err(PipelineError::EmptySet("evaluate"));
    }
    let enc = &config.encoder;
    let adv_cfg = TrainConfig {
        adversarial: super::AdversarialConfig { enabled: true, ..config.train.adversarial },
        ..config.train.clone()
    };
    let shared_adv_test = match config.test_attack.mode {
        AttackMode::Random => Some(adversarial_test_set(&split.test, &config.test_attack, enc, None)?),
        AttackMode::Guided => None,
    };
    let sink = |kind: ModelKind, regime: &str| {
        checkpoint_dir.map(|d| CheckpointSink {
            dir: d.to_path_buf(),
            stem: format!("{kind}-{regime}"),
            config_digest: config_digest.to_string(),
        })
    };
    let pick = |o: &super::TrainOutcome| match config.checkpoint {
        CheckpointChoice::Final => o.model.clone(),
        CheckpointChoice::Best => o.best.clone(),
    };
    let mut rows = Vec::new();
    let mut training = Vec::new();
    for spec in specs {
        let kind = spec.kind;
        log::info!("{kind}: clean training");
        let clean = train(Model::build(spec, config.model_seed)?, split, &config.train, enc, sink(kind, "clean").as_ref())?;
        let clean_model = pick(&clean);
        training.push(TrainingRecord {
            model: kind,
            regime: "clean".into(),
            train_size: clean.train_size,
            best_epoch: clean.best_epoch,
            log: clean.log.clone(),
        });
        let oracle = ModelOracle::new(&clean_model, Alphabet::default())?;
        let adv_test = match &shared_adv_test {
            Some(t) => t.clone(),
            None => adversarial_test_set(&split.test, &config.test_attack, enc, Some(&oracle))?,
        };
        let eval = |m: &Model<f32>, set: &[RawEmail], s| evaluate(m, set, enc, s, config.checkpoint, config_digest);
        rows.push(eval(&clean_model, &split.test, Scenario::CleanClean)?);
        rows.push(eval(&clean_model, &adv_test, Scenario::CleanAdv)?);
        log::info!("{kind}: adversarial training");
        let adv = train_adversarial(
            Model::build(spec, config.model_seed)?,
            split,
            &adv_cfg,
            enc,
            Some(&oracle),
            sink(kind, "adv").as_ref(),
        )?;
        training.push(TrainingRecord {
            model: kind,
            regime: "adversarial".into(),
            train_size: adv.train_size,
            best_epoch: adv.best_epoch,
            log: adv.log.clone(),
        });
        rows.push(eval(&pick(&adv), &adv_test, Scenario::AdvAdv)?);
    }
    Ok(ScenarioReport { config_digest: config_digest.to_string(), config: config.clone(), rows, training })
}
