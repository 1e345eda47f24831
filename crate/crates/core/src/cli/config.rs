//! Run configuration: a TOML file whose sections mirror the library modules,
//! overlaid with `--section.key value` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::attack::{AttackMode, CampaignConfig};
use crate::corpus::FieldMapping;
use crate::encoder::EncoderConfig;
use crate::llm::EndpointConfig;
use crate::models::ModelKind;
use crate::pipeline::{CheckpointChoice, TrainConfig};

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "CHARPHISH_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub store: PathBuf,
    pub split: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            store: "charphish-store.jsonl".into(),
            split: "charphish-split.json".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { seed: crate::DEFAULT_SEED, ratios: [0.70, 0.15, 0.15] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub kind: ModelKind,
    /// Weight initialization seed.
    pub seed: u64,
    pub checkpoint: CheckpointChoice,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self { kind: ModelKind::CharGru, seed: crate::DEFAULT_SEED, checkpoint: CheckpointChoice::Final }
    }
}

/// Attack settings; `fraction` only matters for campaigns, test-set
/// construction always perturbs every phishing email.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSettings {
    pub epsilon: f64,
    pub fraction: f64,
    pub mode: AttackMode,
    pub seed: u64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self { epsilon: 0.1, fraction: 1.0, mode: AttackMode::Random, seed: crate::DEFAULT_SEED }
    }
}

impl AttackSettings {
    pub fn campaign(&self) -> CampaignConfig {
        CampaignConfig { epsilon: self.epsilon, fraction: self.fraction, mode: self.mode, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub encoder: EncoderConfig,
    pub csv: FieldMapping,
    pub split: SplitSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub attack: AttackSettings,
    pub llm: EndpointConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("bad override `--{key}`: {message}")]
    Override { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Parses a flag value as a TOML literal; anything that is not one is a
/// string.
fn literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set(table: &mut Table, key: &str, value: Value) -> Result<(), ConfigError> {
    let err = |message: &str| ConfigError::Override { key: key.to_string(), message: message.to_string() };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty key segment"));
    }
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        let entry = cur.entry(s.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| err("not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Resolves the configuration from an optional file (falling back to
    /// `CHARPHISH_CONFIG`) and `(key, value)` overrides applied in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let path = file.map(Path::to_path_buf).or(env_path);
        let mut table = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.clone(), source })?;
                text.parse::<Table>().map_err(|e| ConfigError::Parse { path: p.clone(), message: e.to_string() })?
            }
            None => Table::new(),
        };
        for (k, v) in overrides {
            set(&mut table, k, literal(v))?;
        }
        let config: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| match &path {
            Some(p) => ConfigError::Parse { path: p.clone(), message: e.to_string() },
            None => ConfigError::Invalid(e.to_string()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.encoder.max_len == 0 {
            return Err(ConfigError::Invalid("encoder.max_len must be positive".into()));
        }
        let a = &self.attack;
        if !(a.epsilon > 0.0 && a.epsilon <= 1.0) || !(0.0..=1.0).contains(&a.fraction) {
            return Err(ConfigError::Invalid(format!("attack epsilon {} / fraction {} out of range", a.epsilon, a.fraction)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn digest(&self) -> String {
        crate::sha256_hex(serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
