use std::collections::HashSet;
use std::fs;

use charphish::corpus::{body_hash, FieldMapping, IngestFormat, SplitRatios};
use charphish::{CorpusSplit, CorpusStore, Label, RawEmail};
use proptest::prelude::*;

fn ingest(bytes: &[u8], format: IngestFormat, label: Option<Label>) -> (CorpusStore, charphish::corpus::IngestStats) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("src");
    fs::write(&path, bytes).unwrap();
    let mut store = CorpusStore::new();
    let stats = store.ingest(&path, format, "t", label, &FieldMapping::default()).unwrap();
    (store, stats)
}

#[test]
fn csv_with_one_undecodable_row() {
    let mut bytes = b"subject,body,label\nhi,hello there,0\n".to_vec();
    bytes.extend_from_slice(b"bad,broken \x81\x90 bytes,1\n");
    bytes.extend_from_slice(b"win,CLICK HERE now,1\n");
    let (store, stats) = ingest(&bytes, IngestFormat::Csv, None);
    assert_eq!((stats.count, stats.skipped), (2, 1));
    assert_eq!(store.count_label(Label::Phishing), 1);
}

#[test]
fn empty_sources_yield_nothing() {
    for format in [IngestFormat::Csv, IngestFormat::Jsonl, IngestFormat::Mbox] {
        let (store, stats) = ingest(b"", format, Some(Label::Clean));
        assert_eq!((stats.count, stats.skipped, store.len()), (0, 0, 0), "{format:?}");
    }
}

#[test]
fn single_class_source_takes_the_given_label() {
    let (store, stats) = ingest(b"body\nverify your account\nyour parcel is waiting\n", IngestFormat::Csv, Some(Label::Phishing));
    assert_eq!(stats.count, 2);
    assert!(store.emails().iter().all(|e| e.label == Label::Phishing));
}

#[test]
fn csv_missing_mapped_column_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    fs::write(&path, "text,label\nhello,0\n").unwrap();
    assert!(CorpusStore::new().ingest(&path, IngestFormat::Csv, "t", None, &FieldMapping::default()).is_err());
    let mapping = FieldMapping { body_col: "text".into(), ..FieldMapping::default() };
    assert_eq!(CorpusStore::new().ingest(&path, IngestFormat::Csv, "t", None, &mapping).unwrap().count, 1);
}

#[test]
fn mbox_and_eml() {
    let mbox = "From a@x Mon Jan  1 00:00:00 2024\nSubject: first\n\nbody one\n\n\
                From b@x Mon Jan  1 00:00:00 2024\nSubject: second\n\nbody two\n";
    let (store, stats) = ingest(mbox.as_bytes(), IngestFormat::Mbox, Some(Label::Phishing));
    assert_eq!(stats.count, 2);
    assert_eq!(store.emails()[1].subject, "second");
    assert!(store.emails()[0].body.contains("body one"));

    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.eml"), "Subject: Lunch\r\nFrom: a@x\r\n\r\nSee you at noon.\r\n").unwrap();
    fs::write(dir.path().join("b.eml"), "Subject: Empty\r\n\r\n").unwrap();
    let mut store = CorpusStore::new();
    let stats = store.ingest(dir.path(), IngestFormat::Eml, "eml", Some(Label::Clean), &FieldMapping::default()).unwrap();
    assert_eq!((stats.count, stats.skipped), (1, 1));
    assert_eq!(store.emails()[0].subject, "Lunch");
}

#[test]
fn dedupe_keeps_first_ingested() {
    let e = |id: &str, subject: &str, body: &str| RawEmail {
        id: id.into(),
        source: "t".into(),
        subject: subject.into(),
        body: body.into(),
        label: Label::Clean,
    };
    let mut store = CorpusStore::from_emails([e("a", "x", "same body"), e("b", "y", "same body  \r\n"), e("c", "z", "other")]);
    assert_eq!(store.deduplicate(), 1);
    let ids: Vec<&str> = store.emails().iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["a", "c"]);
    assert_eq!(store.deduplicate(), 0);
}

fn arb_email() -> impl Strategy<Value = RawEmail> {
    ("[a-z0-9]{1,8}", "\\PC{0,20}", "\\PC{1,60}", any::<bool>()).prop_map(|(id, subject, body, phish)| RawEmail {
        id,
        source: "p".into(),
        subject,
        body,
        label: if phish { Label::Phishing } else { Label::Clean },
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn store_round_trips(emails in prop::collection::vec(arb_email(), 0..20)) {
        let store = CorpusStore::from_emails(emails);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        store.save(&path).unwrap();
        let back = CorpusStore::load(&path).unwrap();
        prop_assert_eq!(back.emails(), store.emails());

        let mut reingested = CorpusStore::new();
        reingested.ingest(&path, IngestFormat::Jsonl, "p", None, &FieldMapping::default()).unwrap();
        let kept: Vec<&RawEmail> = store.emails().iter().filter(|e| !e.body.trim().is_empty()).collect();
        prop_assert_eq!(reingested.len(), kept.len());
        for (a, b) in reingested.emails().iter().zip(kept) {
            prop_assert_eq!((&a.id, &a.subject, &a.body, a.label), (&b.id, &b.subject, &b.body, b.label));
        }
    }

    #[test]
    fn dedupe_leaves_unique_hashes(bodies in prop::collection::vec("(a|b|c| |\n){1,6}", 1..30)) {
        let mut store = CorpusStore::from_emails(bodies.iter().enumerate().map(|(i, b)| RawEmail {
            id: i.to_string(), source: "p".into(), subject: String::new(), body: b.clone(), label: Label::Clean,
        }));
        store.deduplicate();
        let hashes: Vec<String> = store.emails().iter().map(|e| body_hash(&e.body)).collect();
        prop_assert_eq!(hashes.iter().collect::<HashSet<_>>().len(), hashes.len());
    }

    #[test]
    fn split_partitions_and_stratifies(n_clean in 10usize..120, n_phish in 10usize..120, seed in any::<u64>()) {
        let emails = (0..n_clean + n_phish).map(|i| RawEmail {
            id: format!("e{i}"), source: "p".into(), subject: String::new(), body: format!("b{i}"),
            label: if i < n_clean { Label::Clean } else { Label::Phishing },
        });
        let store = CorpusStore::from_emails(emails);
        let split = CorpusSplit::new(&store, SplitRatios::default(), seed).unwrap();
        let ids: Vec<&str> = split.train.iter().chain(&split.validation).chain(&split.test).map(|e| e.id.as_str()).collect();
        prop_assert_eq!(ids.len(), store.len());
        prop_assert_eq!(ids.iter().collect::<HashSet<_>>().len(), store.len());
        for (class, n) in [(Label::Clean, n_clean), (Label::Phishing, n_phish)] {
            let in_train = split.train.iter().filter(|e| e.label == class).count() as f64;
            prop_assert!((in_train - 0.7 * n as f64).abs() <= 1.0 + 1e-9, "{class}: {in_train} of {n}");
        }
        prop_assert_eq!(CorpusSplit::new(&store, SplitRatios::default(), seed).unwrap(), split);
    }
}
