//! Ingest a CSV export and an mbox file, deduplicate, split.
//!
//! ```sh
//! cargo run --example ingest_corpus
//! ```

use std::fs;

use charphish::corpus::{FieldMapping, IngestFormat, SplitRatios};
use charphish::{CorpusSplit, CorpusStore, Label};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile_dir()?;
    let csv = dir.join("export.csv");
    let mut rows = String::from("subject,body,label\n");
    for i in 0..20 {
        rows.push_str(&format!("weekly sync {i},agenda for week {i} attached,0\n"));
    }
    rows.push_str("weekly sync 0,agenda for week 0 attached,0\n");
    fs::write(&csv, rows)?;

    let mbox = dir.join("reported.mbox");
    let mut boxed = String::new();
    for i in 0..20 {
        boxed.push_str(&format!(
            "From x@example Mon Jan  1 00:00:00 2024\nSubject: account {i}\n\nVERIFY YOUR ACCOUNT at http://bank{i}.example\n\n"
        ));
    }
    fs::write(&mbox, boxed)?;

    let mut store = CorpusStore::new();
    let a = store.ingest(&csv, IngestFormat::Csv, "export", None, &FieldMapping::default())?;
    let b = store.ingest(&mbox, IngestFormat::Mbox, "reported", Some(Label::Phishing), &FieldMapping::default())?;
    println!("csv: {} ingested, {} skipped", a.count, a.skipped);
    println!("mbox: {} ingested, {} skipped", b.count, b.skipped);
    println!("duplicates removed: {}", store.deduplicate());

    let split = CorpusSplit::new(&store, SplitRatios::default(), 42)?;
    println!("train {} / validation {} / test {}", split.train.len(), split.validation.len(), split.test.len());
    split.manifest().save(&dir.join("split.json"))?;
    store.save(&dir.join("store.jsonl"))?;
    println!("store and manifest in {}", dir.display());
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join("charphish-ingest-example");
    fs::create_dir_all(&dir)?;
    Ok(dir)
}
