//! Clean vs adversarial training on a synthetic corpus, all three scenarios.
//!
//! ```sh
//! cargo run --release --example robustness_scenarios -- --guided chargru charcnn
//! ```
//!
//! Without `--guided` the perturbed test split comes from random edits,
//! which at this scale barely move a clean-trained model.

use charphish::attack::AttackMode;
use charphish::corpus::SplitRatios;
use charphish::encoder::EncoderConfig;
use charphish::fixtures::{generate_emails, SyntheticSpec};
use charphish::pipeline::{run_scenarios, ScenarioConfig, TrainConfig};
use charphish::{CorpusSplit, CorpusStore, ModelKind, NetworkSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (flags, names): (Vec<String>, Vec<String>) = std::env::args().skip(1).partition(|a| a.starts_with("--"));
    let mut kinds = names.iter().map(|a| a.parse()).collect::<Result<Vec<ModelKind>, _>>()?;
    if kinds.is_empty() {
        kinds = ModelKind::ALL.to_vec();
    }
    let t = 200;
    let store = CorpusStore::from_emails(generate_emails(&SyntheticSpec::with_samples(2000, t, 42))?);
    let split = CorpusSplit::new(&store, SplitRatios::default(), 42)?;
    let mut config = ScenarioConfig::default();
    config.encoder = EncoderConfig { max_len: t, include_subject: true };
    config.train = TrainConfig { epochs: 5, ..config.train };
    if flags.iter().any(|f| f == "--guided") {
        config.test_attack.mode = AttackMode::Guided;
    }
    let specs: Vec<NetworkSpec> = kinds.iter().map(|&k| NetworkSpec::preset(k, t)).collect();
    let report = run_scenarios(&specs, &split, &config, "example", None)?;
    print!("{}", report.to_table());
    Ok(())
}
