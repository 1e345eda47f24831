//! Source format parsers.
//!
//! A record is malformed, and skipped, when its bytes decode neither as UTF-8
//! nor as ISO-8859-1 text, when the message cannot be parsed, or when its body
//! is empty after trimming.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mail_parser::mailbox::mbox::MessageIterator;
use mail_parser::MessageParser;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Label, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestFormat {
    Eml,
    Mbox,
    Csv,
    Jsonl,
}

impl FromStr for IngestFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eml" => Ok(Self::Eml),
            "mbox" => Ok(Self::Mbox),
            "csv" => Ok(Self::Csv),
            "jsonl" | "ndjson" => Ok(Self::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Column (csv) or field (jsonl) names. `subject_col` and `label_col` may be
/// empty to mean "not present".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMapping {
    pub subject_col: String,
    pub body_col: String,
    pub label_col: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self { subject_col: "subject".into(), body_col: "body".into(), label_col: "label".into() }
    }
}

pub(super) struct ParsedRecord {
    pub id: Option<String>,
    pub subject: String,
    pub body: String,
    pub label: Label,
}

#[derive(Default)]
pub(super) struct Parsed {
    pub records: Vec<ParsedRecord>,
    pub skipped: usize,
}

impl Parsed {
    fn take(&mut self, rec: Option<ParsedRecord>) {
        match rec {
            Some(r) => self.records.push(r),
            None => self.skipped += 1,
        }
    }
}

/// UTF-8 first, then ISO-8859-1. The Latin-1 fallback rejects C0 controls
/// other than tab, newline, form feed and carriage return, and the C1 range
/// `0x80..=0x9F`, which carry no text in that encoding.
pub fn decode_text(bytes: &[u8]) -> Option<String> {
    if let Ok(s) = std::str::from_utf8(bytes) {
        return Some(s.to_string());
    }
    bytes
        .iter()
        .map(|&b| match b {
            b'\t' | b'\n' | 0x0C | b'\r' | 0x20..=0x7E | 0xA0..=0xFF => Some(char::from(b)),
            _ => None,
        })
        .collect()
}

fn unreadable(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Unreadable { path: path.to_path_buf(), source }
}

pub(super) fn parse_source(path: &Path, format: IngestFormat, label: Option<Label>, mapping: &FieldMapping) -> Result<Parsed> {
    match format {
        IngestFormat::Eml => parse_eml_path(path, label),
        IngestFormat::Mbox => parse_mbox(path, label),
        IngestFormat::Csv => parse_csv(path, label, mapping),
        IngestFormat::Jsonl => parse_jsonl(path, label, mapping),
    }
}

fn nonempty_body(subject: String, body: String, label: Label, id: Option<String>) -> Option<ParsedRecord> {
    if body.trim().is_empty() {
        return None;
    }
    Some(ParsedRecord { id, subject, body, label })
}

fn parse_message(raw: &[u8], label: Label) -> Option<ParsedRecord> {
    decode_text(raw)?;
    let msg = MessageParser::default().parse(raw)?;
    let subject = msg.subject().unwrap_or_default().to_string();
    let body = msg.body_text(0).or_else(|| msg.body_html(0))?.into_owned();
    nonempty_body(subject, body, label, None)
}

fn parse_eml_path(path: &Path, label: Option<Label>) -> Result<Parsed> {
    let label = label.ok_or(CorpusError::MissingLabel)?;
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(unreadable(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let raws: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).map_err(unreadable(f))).collect::<Result<_>>()?;
    let parsed: Vec<Option<ParsedRecord>> = raws.par_iter().map(|raw| parse_message(raw, label)).collect();
    let mut out = Parsed::default();
    parsed.into_iter().for_each(|r| out.take(r));
    Ok(out)
}

fn parse_mbox(path: &Path, label: Option<Label>) -> Result<Parsed> {
    let label = label.ok_or(CorpusError::MissingLabel)?;
    let file = fs::File::open(path).map_err(unreadable(path))?;
    let mut out = Parsed::default();
    for msg in MessageIterator::new(BufReader::new(file)) {
        let msg = msg.map_err(unreadable(path))?;
        out.take(parse_message(msg.contents(), label));
    }
    Ok(out)
}

fn resolve_label(fixed: Option<Label>, raw: Option<&str>) -> Option<Label> {
    match fixed {
        Some(l) => Some(l),
        None => raw?.parse().ok(),
    }
}

fn parse_csv(path: &Path, label: Option<Label>, mapping: &FieldMapping) -> Result<Parsed> {
    let bytes = fs::read(path).map_err(unreadable(path))?;
    let mut out = Parsed::default();
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(out);
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(bytes.as_slice());
    let headers: Vec<String> = rdr.byte_headers()?.iter().map(|h| String::from_utf8_lossy(h).trim().to_string()).collect();
    let col = |name: &str| -> Result<Option<usize>> {
        if name.is_empty() {
            return Ok(None);
        }
        headers.iter().position(|h| h == name).map(Some).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let body_col = col(&mapping.body_col)?.ok_or_else(|| CorpusError::MissingColumn("<body>".into()))?;
    let subject_col = col(&mapping.subject_col).or_else(|e| if mapping.subject_col == "subject" { Ok(None) } else { Err(e) })?;
    let label_col = if label.is_some() { None } else { col(&mapping.label_col)? };
    if label.is_none() && label_col.is_none() {
        return Err(CorpusError::MissingLabel);
    }
    for rec in rdr.byte_records() {
        let Ok(rec) = rec else {
            out.skipped += 1;
            continue;
        };
        let field = |i: usize| rec.get(i).and_then(decode_text);
        let parsed = (|| {
            let body = field(body_col)?;
            let subject = match subject_col {
                Some(i) => field(i)?,
                None => String::new(),
            };
            let raw_label = label_col.map(field);
            let l = resolve_label(label, raw_label.flatten().as_deref())?;
            nonempty_body(subject, body, l, None)
        })();
        out.take(parsed);
    }
    Ok(out)
}

fn parse_jsonl(path: &Path, label: Option<Label>, mapping: &FieldMapping) -> Result<Parsed> {
    let bytes = fs::read(path).map_err(unreadable(path))?;
    let mut out = Parsed::default();
    for line in bytes.split(|&b| b == b'\n') {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec = (|| {
            let text = decode_text(line)?;
            let v: serde_json::Value = serde_json::from_str(&text).ok()?;
            let get = |k: &str| v.get(k).and_then(|x| x.as_str()).map(str::to_string);
            let body = get(&mapping.body_col)?;
            let subject = get(&mapping.subject_col).unwrap_or_default();
            let raw_label = v.get(&mapping.label_col).map(|x| match x {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            });
            if label.is_none() && raw_label.is_none() {
                return None;
            }
            let l = resolve_label(label, raw_label.as_deref())?;
            nonempty_body(subject, body, l, get("id"))
        })();
        out.take(rec);
    }
    Ok(out)
}
