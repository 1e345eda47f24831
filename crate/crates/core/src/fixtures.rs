//! Synthetic corpora and rule-based stub oracles.
//!
//! Synthetic emails are built from a shared lowercase filler vocabulary, so
//! the class signal lives only in planted motifs. Every phishing email
//! carries phishing motifs (URL prefixes, HTML anchors, all-caps imperatives);
//! clean emails carry none of them. Clean motifs appear in every clean email
//! and, when `mimicry_rate > 0`, in some phishing emails as well.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{self, Oracle};
use crate::encoder::{Alphabet, EncoderConfig};
use crate::{Label, RawEmail};

#[derive(Debug, Error, PartialEq)]
pub enum FixtureError {
    #[error("motif `{motif}` ({len} chars) does not fit in {seq_len} characters")]
    MotifTooLong { motif: String, len: usize, seq_len: usize },
    #[error("motif `{0}` contains characters outside the alphabet")]
    MotifAlphabet(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

const FILLER: &[&str] = &[
    "account", "after", "again", "along", "also", "around", "before", "between", "bring", "change", "check",
    "could", "detail", "during", "early", "email", "every", "first", "follow", "friday", "group", "have",
    "help", "here", "just", "know", "later", "letter", "like", "little", "look", "make", "monday", "more",
    "need", "next", "note", "number", "office", "order", "other", "over", "people", "place", "plan", "please",
    "point", "price", "quick", "reply", "right", "send", "service", "should", "small", "some", "soon", "still",
    "system", "team", "that", "their", "there", "these", "thing", "think", "this", "time", "today", "update",
    "very", "want", "week", "what", "when", "where", "which", "while", "with", "work", "would", "year",
];

const SUBJECT_WORDS: &[&str] = &[
    "notice", "update", "question", "reminder", "request", "status", "info", "follow up", "account", "schedule",
];

pub const DEFAULT_PHISHING_MOTIFS: &[&str] = &["http://", "CLICK HERE", "<a href=", "VERIFY YOUR ACCOUNT", "URGENT"];
pub const DEFAULT_CLEAN_MOTIFS: &[&str] = &["best regards", "meeting notes", "see you at lunch", "thanks again"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    /// Model sequence length. Subject, separator and body together stay
    /// within it, so nothing planted is ever truncated away.
    pub seq_len: usize,
    pub phishing_motifs: Vec<String>,
    pub clean_motifs: Vec<String>,
    /// Phishing motifs planted per phishing email.
    pub motifs_per_email: usize,
    /// Probability that a phishing email also carries a clean motif.
    pub mimicry_rate: f64,
    /// Per-character typo probability in filler text.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            seq_len: 200,
            phishing_motifs: DEFAULT_PHISHING_MOTIFS.iter().map(|s| s.to_string()).collect(),
            clean_motifs: DEFAULT_CLEAN_MOTIFS.iter().map(|s| s.to_string()).collect(),
            motifs_per_email: 1,
            mimicry_rate: 0.5,
            noise_rate: 0.02,
            seed: crate::DEFAULT_SEED,
        }
    }
}

impl SyntheticSpec {
    pub fn with_samples(n_samples: usize, seq_len: usize, seed: u64) -> Self {
        Self { n_samples, seq_len, seed, ..Self::default() }
    }

    fn validate(&self) -> Result<(), FixtureError> {
        let alphabet = Alphabet::default();
        if self.phishing_motifs.is_empty() || self.clean_motifs.is_empty() {
            return Err(FixtureError::InvalidSpec("motif sets must be nonempty".into()));
        }
        if self.motifs_per_email == 0 {
            return Err(FixtureError::InvalidSpec("motifs_per_email must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || !(0.0..=1.0).contains(&self.mimicry_rate) {
            return Err(FixtureError::InvalidSpec("rates must lie in [0, 1]".into()));
        }
        for m in self.phishing_motifs.iter().chain(&self.clean_motifs) {
            if m.is_empty() || !m.chars().all(|c| alphabet.contains(c)) {
                return Err(FixtureError::MotifAlphabet(m.clone()));
            }
            let len = m.chars().count();
            if len > self.seq_len {
                return Err(FixtureError::MotifTooLong { motif: m.clone(), len, seq_len: self.seq_len });
            }
        }
        let longest = |ms: &[String]| ms.iter().map(|m| m.chars().count() + 1).max().unwrap_or(0);
        let needed = 24 + self.motifs_per_email * longest(&self.phishing_motifs) + longest(&self.clean_motifs);
        if needed > self.seq_len {
            return Err(FixtureError::InvalidSpec(format!("seq_len {} leaves no room for filler (need {needed})", self.seq_len)));
        }
        Ok(())
    }
}

/// A motif occurrence, in characters of the email body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedMotif {
    pub motif: String,
    pub span: Range<usize>,
    pub phishing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEmail {
    pub email: RawEmail,
    pub motifs: Vec<PlantedMotif>,
}

impl SyntheticEmail {
    /// Phishing motif spans shifted into the text the model sees.
    pub fn model_spans(&self, encoder: &EncoderConfig) -> Vec<Range<usize>> {
        let shift = if encoder.include_subject { self.email.subject.chars().count() + 1 } else { 0 };
        self.motifs.iter().filter(|m| m.phishing).map(|m| m.span.start + shift..m.span.end + shift).collect()
    }
}

fn sentence(rng: &mut ChaCha8Rng, noise: f64) -> String {
    let words = rng.gen_range(4..=9);
    let mut s = String::new();
    for w in 0..words {
        if w > 0 {
            s.push(' ');
        }
        s.push_str(FILLER.choose(rng).expect("filler"));
    }
    s.push('.');
    let mut chars: Vec<char> = s.chars().collect();
    for c in chars.iter_mut() {
        if c.is_ascii_lowercase() && rng.gen_bool(noise) {
            *c = rng.gen_range(b'a'..=b'z') as char;
        }
    }
    chars[0] = chars[0].to_ascii_uppercase();
    chars.into_iter().collect()
}

fn one_email(spec: &SyntheticSpec, index: usize, label: Label, rng: &mut ChaCha8Rng) -> SyntheticEmail {
    let first = SUBJECT_WORDS.choose(rng).expect("subject");
    let second = FILLER.choose(rng).expect("filler");
    let subject = format!("{}{} {second}", first[..1].to_ascii_uppercase(), &first[1..]);
    let mut planted: Vec<(String, bool)> = Vec::new();
    match label {
        Label::Phishing => {
            for _ in 0..spec.motifs_per_email {
                planted.push((spec.phishing_motifs.choose(rng).expect("phishing motif").clone(), true));
            }
            if rng.gen_bool(spec.mimicry_rate) {
                planted.push((spec.clean_motifs.choose(rng).expect("clean motif").clone(), false));
            }
        }
        Label::Clean => planted.push((spec.clean_motifs.choose(rng).expect("clean motif").clone(), false)),
    }
    planted.shuffle(rng);

    let room = spec.seq_len - subject.chars().count() - 1;
    let motif_chars: usize = planted.iter().map(|(m, _)| m.chars().count() + 1).sum();
    let filler_budget = room - motif_chars;
    let target = rng.gen_range(filler_budget / 2..=filler_budget);
    let mut sentences = Vec::new();
    let mut used = 0;
    loop {
        let s = sentence(rng, spec.noise_rate);
        if used + s.len() + 1 > target {
            break;
        }
        used += s.len() + 1;
        sentences.push(s);
    }
    if sentences.is_empty() {
        sentences.push("Ok.".to_string());
    }
    let mut slots: Vec<usize> = (0..planted.len()).map(|_| rng.gen_range(0..=sentences.len())).collect();
    slots.sort_unstable();

    let mut body = String::new();
    let mut motifs = Vec::new();
    let mut len = 0;
    let mut pieces: Vec<(String, Option<bool>)> = Vec::new();
    let mut next = planted.into_iter().zip(slots).peekable();
    for i in 0..=sentences.len() {
        while let Some(((m, phishing), _)) = next.next_if(|(_, slot)| *slot == i) {
            pieces.push((m, Some(phishing)));
        }
        if let Some(s) = sentences.get(i) {
            pieces.push((s.clone(), None));
        }
    }
    for (k, (text, motif)) in pieces.into_iter().enumerate() {
        if k > 0 {
            body.push(' ');
            len += 1;
        }
        let n = text.chars().count();
        if let Some(phishing) = motif {
            motifs.push(PlantedMotif { motif: text.clone(), span: len..len + n, phishing });
        }
        body.push_str(&text);
        len += n;
    }
    let tag = match label {
        Label::Phishing => "p",
        Label::Clean => "c",
    };
    SyntheticEmail {
        email: RawEmail { id: format!("syn-{tag}{index:05}"), source: "synthetic".into(), subject, body, label },
        motifs,
    }
}

/// Deterministic synthetic corpus; labels alternate, so the classes are
/// balanced within one email.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticEmail>, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let label = if i % 2 == 0 { Label::Clean } else { Label::Phishing };
        // Typos may by chance spell a phishing motif; redraw until clean.
        let email = loop {
            let e = one_email(spec, i, label, &mut rng);
            let text = format!("{}\n{}", e.email.subject, e.email.body);
            if label == Label::Phishing || !spec.phishing_motifs.iter().any(|m| text.contains(m.as_str())) {
                break e;
            }
        };
        out.push(email);
    }
    Ok(out)
}

/// Plain emails of a synthetic corpus.
pub fn generate_emails(spec: &SyntheticSpec) -> Result<Vec<RawEmail>, FixtureError> {
    Ok(generate(spec)?.into_iter().map(|s| s.email).collect())
}

/// Decision rule of a stub oracle. Rules yield `p_phish`; `p_clean` is its
/// complement.
#[derive(Debug, Clone, PartialEq)]
pub enum StubRule {
    /// Always `[0.5, 0.5]`.
    Constant,
    /// 0.9 when any needle occurs, else 0.1.
    Contains(Vec<String>),
    /// 0.9 when the character at `position` equals `char`, else 0.1.
    CharAt { position: usize, char: char },
    /// `min(0.1 + step · count(char), 0.95)`: graded, so every occurrence
    /// matters on its own.
    Count { char: char, step: f64 },
}

impl StubRule {
    pub fn contains(needle: &str) -> Self {
        StubRule::Contains(vec![needle.to_string()])
    }

    pub fn p_phish(&self, text: &str) -> f64 {
        match self {
            StubRule::Constant => 0.5,
            StubRule::Contains(needles) => {
                if needles.iter().any(|n| text.contains(n.as_str())) {
                    0.9
                } else {
                    0.1
                }
            }
            StubRule::CharAt { position, char } => {
                if text.chars().nth(*position) == Some(*char) {
                    0.9
                } else {
                    0.1
                }
            }
            StubRule::Count { char, step } => (0.1 + step * text.chars().filter(|c| c == char).count() as f64).min(0.95),
        }
    }
}

/// Counting black-box classifier driven by a [`StubRule`].
#[derive(Debug)]
pub struct StubOracle {
    rule: StubRule,
    counter: AtomicU64,
}

pub fn stub_oracle(rule: StubRule) -> StubOracle {
    StubOracle { rule, counter: AtomicU64::new(0) }
}

impl StubOracle {
    pub fn rule(&self) -> &StubRule {
        &self.rule
    }
}

impl Oracle for StubOracle {
    fn query(&self, texts: &[String]) -> attack::Result<Vec<[f64; 2]>> {
        self.counter.fetch_add(texts.len() as u64, Ordering::Relaxed);
        Ok(texts
            .iter()
            .map(|t| {
                let p = self.rule.p_phish(t);
                [1.0 - p, p]
            })
            .collect())
    }

    fn queries(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}
