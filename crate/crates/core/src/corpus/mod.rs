//! Email corpus: ingestion, normalization, deduplication and splitting.
//!
//! The store is an append-only list of [`RawEmail`] persisted as JSONL, one
//! object per line with the fields `id`, `source`, `subject`, `body` and
//! `label` (0 = clean, 1 = phishing).

mod parse;
mod split;

pub use parse::{decode_text, FieldMapping, IngestFormat};
pub use split::{stratified_order, CorpusSplit, SplitManifest, SplitRatios};

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Unwritable { path: PathBuf, source: std::io::Error },
    #[error("unknown ingest format `{0}` (expected eml, mbox, csv or jsonl)")]
    UnknownFormat(String),
    #[error("csv source is missing mapped column `{0}`")]
    MissingColumn(String),
    #[error("source has no label column and no fixed label was given")]
    MissingLabel,
    #[error("store line {line} is not a valid email record: {reason}")]
    BadStoreLine { line: usize, reason: String },
    #[error("class {0} is absent from the store")]
    ClassAbsent(Label),
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("split manifest references unknown email id `{0}`")]
    UnknownId(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Class label. The ordering is fixed everywhere: clean = 0, phishing = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Clean,
    Phishing,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Clean, Label::Phishing];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Clean),
            1 => Some(Label::Phishing),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Label::Clean => Label::Phishing,
            Label::Phishing => Label::Clean,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Phishing => "phishing",
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "phishing" | "phish" | "spam" | "fraud" | "malicious" => Ok(Label::Phishing),
            "0" | "clean" | "ham" | "legitimate" | "legit" | "benign" => Ok(Label::Clean),
            other => Err(format!("unrecognized label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEmail {
    pub id: String,
    pub source: String,
    pub subject: String,
    pub body: String,
    pub label: Label,
}

/// Dedup key: line endings unified to `\n`, trailing whitespace stripped from
/// every line and trailing blank lines dropped. Case is preserved.
pub fn normalize_body(body: &str) -> String {
    let unified = body.replace("\r\n", "\n").replace('\r', "\n");
    let mut lines: Vec<&str> = unified.split('\n').map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

pub fn body_hash(body: &str) -> String {
    crate::sha256_hex(normalize_body(body))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub count: usize,
    pub skipped: usize,
}

/// In-memory email store. Appends are single-writer (`&mut self`); reads
/// are free to run concurrently.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    emails: Vec<RawEmail>,
    ids: HashSet<String>,
}

impl CorpusStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_emails(emails: impl IntoIterator<Item = RawEmail>) -> Self {
        let mut s = Self::new();
        for e in emails {
            s.push(e);
        }
        s
    }

    pub fn emails(&self) -> &[RawEmail] {
        &self.emails
    }

    pub fn len(&self) -> usize {
        self.emails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emails.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RawEmail> {
        self.emails.iter().find(|e| e.id == id)
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.emails.iter().filter(|e| e.label == label).count()
    }

    /// Appends an email, renaming its id with a numeric suffix if it is
    /// already taken. Returns the id actually stored.
    pub fn push(&mut self, mut email: RawEmail) -> String {
        if self.ids.contains(&email.id) || email.id.is_empty() {
            let base = if email.id.is_empty() { email.source.clone() } else { email.id.clone() };
            email.id = self.fresh_id(&base);
        }
        self.ids.insert(email.id.clone());
        let id = email.id.clone();
        self.emails.push(email);
        id
    }

    fn fresh_id(&self, base: &str) -> String {
        (self.emails.len()..)
            .map(|n| format!("{base}-{n}"))
            .find(|c| !self.ids.contains(c))
            .expect("unbounded search")
    }

    /// Parses `path` as `format` and appends every well-formed email.
    /// Malformed entries are counted in [`IngestStats::skipped`].
    pub fn ingest(
        &mut self,
        path: &Path,
        format: IngestFormat,
        source_tag: &str,
        label: Option<Label>,
        mapping: &FieldMapping,
    ) -> Result<IngestStats> {
        let parsed = parse::parse_source(path, format, label, mapping)?;
        let mut stats = IngestStats { count: 0, skipped: parsed.skipped };
        for rec in parsed.records {
            let id = rec.id.unwrap_or_else(|| self.fresh_id(source_tag));
            self.push(RawEmail { id, source: source_tag.to_string(), subject: rec.subject, body: rec.body, label: rec.label });
            stats.count += 1;
        }
        log::info!("ingested {} emails from {} ({} skipped)", stats.count, path.display(), stats.skipped);
        Ok(stats)
    }

    /// Keeps the first email of every normalized-body hash. Returns how many
    /// were removed.
    pub fn deduplicate(&mut self) -> usize {
        let before = self.emails.len();
        let mut seen = HashSet::new();
        self.emails.retain(|e| seen.insert(body_hash(&e.body)));
        self.ids = self.emails.iter().map(|e| e.id.clone()).collect();
        before - self.emails.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| CorpusError::Unreadable { path: path.to_path_buf(), source })?;
        let mut store = Self::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Unreadable { path: path.to_path_buf(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let email: RawEmail = serde_json::from_str(&line)
                .map_err(|e| CorpusError::BadStoreLine { line: n + 1, reason: e.to_string() })?;
            store.push(email);
        }
        Ok(store)
    }

    /// Loads the store at `path`, or an empty store if the file does not
    /// exist yet.
    pub fn open_or_new(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let err = |source| CorpusError::Unwritable { path: path.to_path_buf(), source };
        let mut w = BufWriter::new(File::create(path).map_err(err)?);
        for e in &self.emails {
            let line = serde_json::to_string(e).expect("email serializes");
            w.write_all(line.as_bytes()).map_err(err)?;
            w.write_all(b"\n").map_err(err)?;
        }
        w.flush().map_err(err)
    }
}
