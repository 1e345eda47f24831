//! Classify a few emails through an OpenAI-compatible chat endpoint.
//!
//! ```sh
//! cargo run --example llm_baseline -- http://127.0.0.1:8080/v1/chat/completions llama3.2
//! ```
//!
//! Unreachable endpoints and unparseable replies become abstentions.

use charphish::fixtures::{generate_emails, SyntheticSpec};
use charphish::llm::{run_campaign, EndpointConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut config = EndpointConfig::default();
    if let Some(url) = args.next() {
        config.url = url;
    }
    if let Some(model) = args.next() {
        config.model = model;
    }
    config.timeout_secs = 20.0;
    let emails = generate_emails(&SyntheticSpec::with_samples(6, 200, 1))?;
    let report = run_campaign(&config, &emails)?;
    for r in &report.records {
        let verdict = r.verdict.label.map_or("abstain", |l| l.name());
        println!("{:<12} truth {:<9} remote {:<9} {:.2}s {}", r.email_id, r.truth, verdict, r.verdict.latency_seconds, r.verdict.error.as_deref().unwrap_or(""));
    }
    println!("accuracy {:.3} with {} abstentions", report.metrics.accuracy, report.abstentions);
    Ok(())
}
