//! Training, adversarial training, evaluation and the three-scenario
//! robustness protocol.
//!
//! Scenarios, per architecture:
//!
//! | tag           | trained on              | tested on                  |
//! |---------------|-------------------------|----------------------------|
//! | `clean/clean` | train split             | test split                 |
//! | `clean/adv`   | train split             | perturbed test split       |
//! | `adv/adv`     | train + perturbed share | perturbed test split       |
//!
//! The perturbed test split replaces every phishing email by its attacked
//! version and passes clean emails through; it is built once and shared by
//! both models it evaluates.

mod metrics;
mod scenarios;
mod train;

pub use metrics::{confusion, Averaged, ClassMetrics, Confusion, Metrics};
pub use scenarios::{
    adversarial_test_set, evaluate, run_scenarios, CheckpointChoice, EvalReport, Scenario, ScenarioConfig,
    ScenarioReport, TrainingRecord,
};
pub use train::{
    augment, encode_all, train, train_adversarial, write_epoch_csv, AdversarialConfig, CheckpointSink, EpochLog,
    TrainConfig, TrainOutcome,
};

use thiserror::Error;

use crate::attack::AttackError;
use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("confusion matrix is all zeros")]
    EmptyConfusion,
    #[error("nothing to {0}: the set is empty")]
    EmptySet(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became {loss} at epoch {epoch}, batch {batch} (learning rate {learning_rate})")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize, learning_rate: f64 },
    #[error("adversarial training needs phishing emails in the train split")]
    NoPhishing,
    #[error("model expects sequences of {model} characters, encoder produces {encoder}")]
    LengthMismatch { model: usize, encoder: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("cannot write {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl From<crate::nn::NnError> for PipelineError {
    fn from(e: crate::nn::NnError) -> Self {
        PipelineError::Model(e.into())
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Mixes seed components into one well-spread seed.
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
