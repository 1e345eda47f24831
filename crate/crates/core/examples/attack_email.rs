//! Guided character-level attack against a black-box rule and a trained
//! model, plus the random-edit baseline.

use charphish::attack::{attack, perturb_random, ModelOracle, Oracle};
use charphish::corpus::SplitRatios;
use charphish::encoder::EncoderConfig;
use charphish::fixtures::{generate_emails, stub_oracle, StubRule, SyntheticSpec};
use charphish::pipeline::{train, TrainConfig};
use charphish::{Alphabet, CorpusSplit, CorpusStore, Label, Model, ModelKind, NetworkSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = "URGENT: CLICK HERE to keep your mailbox";
    let rule = stub_oracle(StubRule::Contains(vec!["URGENT".into()]));
    let ex = attack(&rule, text, 0.1, 1)?;
    println!("stub rule: {:?} -> {:?}", ex.original, ex.perturbed);
    println!("  ops {:?}, budget {}, flipped {}, queries {}", ex.ops, ex.budget, ex.flipped, rule.queries());

    let random = perturb_random(text, 0.1, 1, &Alphabet::default())?;
    println!("random:    {:?}", random.perturbed);

    let t = 200;
    let store = CorpusStore::from_emails(generate_emails(&SyntheticSpec::with_samples(1000, t, 3))?);
    let split = CorpusSplit::new(&store, SplitRatios::default(), 3)?;
    let encoder = EncoderConfig { max_len: t, include_subject: true };
    let model = train(Model::build(&NetworkSpec::preset(ModelKind::CharCnn, t), 3)?, &split, &TrainConfig { epochs: 5, ..TrainConfig::default() }, &encoder, None)?.model;
    let oracle = ModelOracle::new(&model, Alphabet::default())?;
    let mut flipped = 0;
    let phishing: Vec<_> = split.test.iter().filter(|e| e.label == Label::Phishing).collect();
    for e in &phishing {
        let ex = attack(&oracle, &encoder.model_text(&e.subject, &e.body), 0.1, 5)?;
        flipped += usize::from(ex.flipped);
    }
    println!("trained charcnn: {flipped}/{} phishing test emails flipped at 10% edits, {} queries", phishing.len(), oracle.queries());
    Ok(())
}
