//! Grad-CAM heatmap of a phishing email, written as a standalone HTML page.
//!
//! ```sh
//! cargo run --release --example explain_email -- heatmap.html
//! ```

use charphish::corpus::SplitRatios;
use charphish::encoder::EncoderConfig;
use charphish::fixtures::{generate_emails, SyntheticSpec};
use charphish::gradcam::{explain, render_html};
use charphish::pipeline::{train, TrainConfig};
use charphish::{Alphabet, CorpusSplit, CorpusStore, Model, ModelKind, NetworkSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "heatmap.html".into());
    let t = 200;
    let store = CorpusStore::from_emails(generate_emails(&SyntheticSpec::with_samples(1000, t, 5))?);
    let split = CorpusSplit::new(&store, SplitRatios::default(), 5)?;
    let encoder = EncoderConfig { max_len: t, include_subject: true };
    let config = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let model = train(Model::build(&NetworkSpec::preset(ModelKind::CharCnn, t), 5)?, &split, &config, &encoder, None)?.model;

    let text = encoder.model_text("account notice", "please check the <a href=\"http://x.example\">portal</a> before friday");
    let ex = explain(&model, &Alphabet::default(), &text, None)?;
    let top = ex.map.aligned_scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let around: String = text.chars().skip(top.saturating_sub(6)).take(13).collect();
    println!("{} (p_phish {:.3}); hottest character {top} in {around:?}", ex.predicted, ex.probs[1]);
    render_html(&ex, "explain_email example", std::path::Path::new(&out))?;
    println!("wrote {out}");
    Ok(())
}
