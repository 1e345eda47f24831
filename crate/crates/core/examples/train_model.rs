//! Train one architecture on a synthetic corpus and report per-epoch
//! progress and held-out metrics.
//!
//! ```sh
//! cargo run --release --example train_model -- charbilstm 4
//! ```

use charphish::corpus::SplitRatios;
use charphish::encoder::EncoderConfig;
use charphish::fixtures::{generate_emails, SyntheticSpec};
use charphish::pipeline::{evaluate, train, CheckpointChoice, Scenario, TrainConfig};
use charphish::{CorpusSplit, CorpusStore, Model, ModelKind, NetworkSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind: ModelKind = args.next().as_deref().unwrap_or("charcnn").parse()?;
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let t = 200;

    let store = CorpusStore::from_emails(generate_emails(&SyntheticSpec::with_samples(1000, t, 7))?);
    let split = CorpusSplit::new(&store, SplitRatios::default(), 7)?;
    let encoder = EncoderConfig { max_len: t, include_subject: true };
    let model = Model::build(&NetworkSpec::preset(kind, t), 7)?;
    println!("{kind}: {} trainable parameters", model.param_count());

    let config = TrainConfig { epochs, ..TrainConfig::default() };
    let outcome = train(model, &split, &config, &encoder, None)?;
    for e in &outcome.log {
        println!("epoch {:>2}  loss {:.4}  val acc {:.4}  {:.1}s", e.epoch, e.train_loss, e.val_accuracy.unwrap_or(f64::NAN), e.seconds);
    }
    let report = evaluate(&outcome.best, &split.test, &encoder, Scenario::CleanClean, CheckpointChoice::Best, "example")?;
    let m = &report.metrics;
    println!(
        "test (best epoch {}): accuracy {:.4}, weighted F1 {:.4}, macro F1 {:.4}, {:.2} ms/sample",
        outcome.best_epoch,
        m.accuracy,
        m.f1.weighted,
        m.f1.macro_avg,
        report.seconds_per_sample * 1e3
    );
    Ok(())
}
