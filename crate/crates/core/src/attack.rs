//! Budgeted black-box character perturbations.
//!
//! An attack may change at most `n = ⌈ε · |text|⌉` characters. Four edit
//! kinds are available: adjacent swap, substitution, deletion and
//! insertion. They are charged by their Levenshtein cost (a swap costs two,
//! the others one), so the edit distance between the original and the
//! perturbed text never exceeds `n`.
//!
//! The guided attack ranks positions by leave-one-out deletion importance and
//! then walks the ranking greedily, keeping at each position the edit that
//! lowers `p_phish` the most, until the prediction flips or the budget runs
//! out. The random mode needs no oracle and spends the full budget on
//! uniformly drawn edits; it is used for training-time augmentation and, by
//! default, for building adversarial test sets.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Alphabet, EncodedEmail};
use crate::models::Model;
use crate::{Label, RawEmail};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("position {position} is out of bounds for text of length {len}")]
    OutOfBounds { position: usize, len: usize },
    #[error("{0:?} needs a character")]
    MissingChar(OpKind),
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("no phishing emails to perturb")]
    EmptyPhishing,
    #[error("guided mode needs an oracle")]
    NeedsOracle,
    #[error("epsilon must lie in (0, 1], got {0}")]
    BadEpsilon(f64),
    #[error("fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("unknown attack mode `{0}` (expected guided or random)")]
    UnknownMode(String),
}

pub type Result<T, E = AttackError> = std::result::Result<T, E>;

/// Black-box classifier: class probabilities `[p_clean, p_phish]` per text.
/// Implementations must tolerate concurrent queries.
pub trait Oracle: Sync {
    fn query(&self, texts: &[String]) -> Result<Vec<[f64; 2]>>;

    /// Texts classified so far.
    fn queries(&self) -> u64;
}

/// Oracle backed by a trained model.
#[derive(Debug)]
pub struct ModelOracle<'m> {
    model: &'m Model<f32>,
    prepared: crate::models::Prepared<f32>,
    alphabet: Alphabet,
    counter: AtomicU64,
}

impl<'m> ModelOracle<'m> {
    pub fn new(model: &'m Model<f32>, alphabet: Alphabet) -> Result<Self> {
        let prepared = model.prepare().map_err(|e| AttackError::Oracle(e.to_string()))?;
        Ok(Self { model, prepared, alphabet, counter: AtomicU64::new(0) })
    }
}

impl Oracle for ModelOracle<'_> {
    fn query(&self, texts: &[String]) -> Result<Vec<[f64; 2]>> {
        self.counter.fetch_add(texts.len() as u64, Ordering::Relaxed);
        let t = self.model.spec().seq_len;
        texts
            .par_iter()
            .map(|s| {
                let e = EncodedEmail::new("", s, Label::Clean, &self.alphabet, t);
                self.model
                    .predict_one(&self.prepared, &e)
                    .map(|p| p.map(f64::from))
                    .map_err(|e| AttackError::Oracle(e.to_string()))
            })
            .collect()
    }

    fn queries(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

/// Prepends a fixed prefix to every query, e.g. the subject line when only
/// the body is perturbed.
struct Prefixed<'a> {
    inner: &'a dyn Oracle,
    prefix: String,
}

impl Oracle for Prefixed<'_> {
    fn query(&self, texts: &[String]) -> Result<Vec<[f64; 2]>> {
        let full: Vec<String> = texts.iter().map(|t| format!("{}{t}", self.prefix)).collect();
        self.inner.query(&full)
    }

    fn queries(&self) -> u64 {
        self.inner.queries()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Swap,
    Substitute,
    Delete,
    Insert,
}

impl OpKind {
    /// Levenshtein cost charged against the budget.
    pub fn cost(self) -> usize {
        match self {
            OpKind::Swap => 2,
            _ => 1,
        }
    }
}

/// One edit. `position` indexes characters of the text it is applied to;
/// a swap exchanges `position` and `position + 1`, an insert puts `char`
/// before `position`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationOp {
    pub kind: OpKind,
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char: Option<char>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Guided,
    Random,
}

impl FromStr for AttackMode {
    type Err = AttackError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "guided" => Ok(AttackMode::Guided),
            "random" => Ok(AttackMode::Random),
            other => Err(AttackError::UnknownMode(other.into())),
        }
    }
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackMode::Guided => "guided",
            AttackMode::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialExample {
    pub original: String,
    pub perturbed: String,
    pub ops: Vec<PerturbationOp>,
    pub budget: usize,
    pub ops_used: usize,
    pub flipped: bool,
    pub queries: u64,
}

/// `⌈ε · length⌉`, with a 1e-9 tolerance for binary rounding: `0.1 · 1500`
/// yields exactly 150.
pub fn budget(epsilon: f64, length: usize) -> usize {
    let x = epsilon * length as f64;
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Character edit distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

fn apply_chars(chars: &mut Vec<char>, op: &PerturbationOp) -> Result<()> {
    let len = chars.len();
    let oob = || AttackError::OutOfBounds { position: op.position, len };
    let p = op.position;
    match op.kind {
        OpKind::Swap => {
            if p + 1 >= len {
                return Err(oob());
            }
            chars.swap(p, p + 1);
        }
        OpKind::Substitute => {
            let c = op.char.ok_or(AttackError::MissingChar(op.kind))?;
            *chars.get_mut(p).ok_or_else(oob)? = c;
        }
        OpKind::Delete => {
            if p >= len {
                return Err(oob());
            }
            chars.remove(p);
        }
        OpKind::Insert => {
            let c = op.char.ok_or(AttackError::MissingChar(op.kind))?;
            if p > len {
                return Err(oob());
            }
            chars.insert(p, c);
        }
    }
    Ok(())
}

pub fn apply_op(text: &str, op: &PerturbationOp) -> Result<String> {
    let mut chars: Vec<char> = text.chars().collect();
    apply_chars(&mut chars, op)?;
    Ok(chars.into_iter().collect())
}

/// Visually confusable replacement, if any.
pub fn confusable(c: char) -> Option<char> {
    Some(match c {
        'o' | 'O' => '0',
        '0' => 'o',
        'i' | 'I' | 'l' | 'L' => '1',
        '1' => 'i',
        'e' | 'E' => '3',
        '3' => 'e',
        'a' | 'A' => '@',
        '@' => 'a',
        's' | 'S' => '$',
        '$' => 's',
        _ => return None,
    })
}

fn random_symbol(alphabet: &Alphabet, avoid: Option<char>, rng: &mut ChaCha8Rng) -> char {
    alphabet.symbols().iter().copied().filter(|&c| Some(c) != avoid).choose(rng).expect("alphabet has symbols")
}

fn substitute_char(current: char, alphabet: &Alphabet, rng: &mut ChaCha8Rng) -> char {
    confusable(current).unwrap_or_else(|| random_symbol(alphabet, Some(current), rng))
}

fn one(oracle: &dyn Oracle, text: &str) -> Result<[f64; 2]> {
    let mut out = oracle.query(&[text.to_string()])?;
    out.pop().ok_or_else(|| AttackError::Oracle("oracle returned no rows".into()))
}

fn is_phish(p: [f64; 2]) -> bool {
    p[1] > p[0]
}

/// Positions ranked by leave-one-out importance
/// `p_phish(text) − p_phish(text without char i)`, highest first, ties by
/// lower index. Returns the ranking and the scores by position.
pub fn score_positions(oracle: &dyn Oracle, text: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let chars: Vec<char> = text.chars().collect();
    let base = one(oracle, text)?[1];
    let variants: Vec<String> =
        (0..chars.len()).map(|i| chars[..i].iter().chain(&chars[i + 1..]).collect()).collect();
    let probs = if variants.is_empty() { Vec::new() } else { oracle.query(&variants)? };
    let scores: Vec<f64> = probs.iter().map(|p| base - p[1]).collect();
    let mut ranking: Vec<usize> = (0..chars.len()).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok((ranking, scores))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackOptions {
    /// Stop as soon as the prediction flips.
    pub early_stop: bool,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self { early_stop: true }
    }
}

/// Greedy guided attack against `oracle`.
pub fn attack(oracle: &dyn Oracle, text: &str, epsilon: f64, seed: u64) -> Result<AdversarialExample> {
    attack_with(oracle, text, epsilon, seed, &Alphabet::default(), AttackOptions::default())
}

pub fn attack_with(
    oracle: &dyn Oracle,
    text: &str,
    epsilon: f64,
    seed: u64,
    alphabet: &Alphabet,
    options: AttackOptions,
) -> Result<AdversarialExample> {
    check_epsilon(epsilon)?;
    let original: Vec<char> = text.chars().collect();
    let n = budget(epsilon, original.len());
    let mut ex = AdversarialExample {
        original: text.to_string(),
        perturbed: text.to_string(),
        ops: Vec::new(),
        budget: n,
        ops_used: 0,
        flipped: false,
        queries: 1,
    };
    let p0 = one(oracle, text)?;
    if !is_phish(p0) || n == 0 {
        return Ok(ex);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ranking, _) = score_positions(oracle, text)?;
    ex.queries += 1 + original.len() as u64;
    let mut current = original.clone();
    // Original index of each current character; `None` for inserted ones.
    let mut origin: Vec<Option<usize>> = (0..original.len()).map(Some).collect();
    let mut p_cur = p0;
    let mut spent = 0;
    for &target in &ranking {
        if spent >= n || (options.early_stop && !is_phish(p_cur)) {
            break;
        }
        let Some(pos) = origin.iter().position(|&o| o == Some(target)) else { continue };
        let here = current[pos];
        let mut candidates = vec![
            PerturbationOp { kind: OpKind::Substitute, position: pos, char: Some(substitute_char(here, alphabet, &mut rng)) },
            PerturbationOp { kind: OpKind::Delete, position: pos, char: None },
            PerturbationOp { kind: OpKind::Insert, position: pos, char: Some(random_symbol(alphabet, None, &mut rng)) },
        ];
        if pos + 1 < current.len() && current[pos + 1] != here {
            candidates.push(PerturbationOp { kind: OpKind::Swap, position: pos, char: None });
        }
        candidates.retain(|op| spent + op.kind.cost() <= n);
        if candidates.is_empty() {
            continue;
        }
        let texts: Vec<String> = candidates
            .iter()
            .map(|op| {
                let mut c = current.clone();
                apply_chars(&mut c, op).expect("candidate built in bounds");
                c.into_iter().collect()
            })
            .collect();
        let probs = oracle.query(&texts)?;
        ex.queries += texts.len() as u64;
        let (best, p_best) = probs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1[1].total_cmp(&b.1[1]).then(a.0.cmp(&b.0)))
            .map(|(i, p)| (i, *p))
            .expect("nonempty candidates");
        if p_best[1] >= p_cur[1] {
            continue;
        }
        let op = candidates[best];
        apply_chars(&mut current, &op)?;
        match op.kind {
            OpKind::Delete => {
                origin.remove(pos);
            }
            OpKind::Insert => origin.insert(pos, None),
            OpKind::Swap => origin.swap(pos, pos + 1),
            OpKind::Substitute => {}
        }
        spent += op.kind.cost();
        ex.ops.push(op);
        p_cur = p_best;
    }
    ex.perturbed = current.into_iter().collect();
    ex.ops_used = ex.ops.len();
    // Post-hoc confirmation of the flip.
    let p_final = if ex.ops.is_empty() { p0 } else { one(oracle, &ex.perturbed)? };
    if !ex.ops.is_empty() {
        ex.queries += 1;
    }
    ex.flipped = is_phish(p_final) != is_phish(p0);
    debug_assert!(edit_distance(&ex.original, &ex.perturbed) <= n);
    Ok(ex)
}

/// Oracle-free perturbation spending the whole budget on random edits.
pub fn perturb_random(text: &str, epsilon: f64, seed: u64, alphabet: &Alphabet) -> Result<AdversarialExample> {
    check_epsilon(epsilon)?;
    let mut chars: Vec<char> = text.chars().collect();
    let n = budget(epsilon, chars.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops = Vec::new();
    let mut spent = 0;
    while spent < n {
        let len = chars.len();
        let mut kinds = vec![OpKind::Insert];
        if len > 0 {
            kinds.extend([OpKind::Substitute, OpKind::Delete]);
        }
        if len > 1 && spent + 2 <= n {
            kinds.push(OpKind::Swap);
        }
        let kind = *kinds.choose(&mut rng).expect("insert is always possible");
        let op = match kind {
            OpKind::Insert => {
                PerturbationOp { kind, position: rng.gen_range(0..=len), char: Some(random_symbol(alphabet, None, &mut rng)) }
            }
            OpKind::Substitute => {
                let p = rng.gen_range(0..len);
                PerturbationOp { kind, position: p, char: Some(substitute_char(chars[p], alphabet, &mut rng)) }
            }
            OpKind::Delete => PerturbationOp { kind, position: rng.gen_range(0..len), char: None },
            OpKind::Swap => PerturbationOp { kind, position: rng.gen_range(0..len - 1), char: None },
        };
        apply_chars(&mut chars, &op)?;
        spent += kind.cost();
        ops.push(op);
    }
    Ok(AdversarialExample {
        original: text.to_string(),
        perturbed: chars.into_iter().collect(),
        ops_used: ops.len(),
        ops,
        budget: n,
        flipped: false,
        queries: 0,
    })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(AttackError::BadEpsilon(epsilon));
    }
    Ok(())
}

/// Settings of a corpus-scale perturbation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub epsilon: f64,
    /// Share of phishing emails perturbed.
    pub fraction: f64,
    pub mode: AttackMode,
    pub seed: u64,
}

/// One perturbed email and the attack that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedEmail {
    pub original_id: String,
    pub email: RawEmail,
    pub example: AdversarialExample,
}

fn per_email_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Perturbs a seeded sample of `round(fraction · P)` of the `P` phishing
/// emails (bodies only). Clean emails are never touched. Results come back
/// in input order; originals are not included.
pub fn perturb_corpus(
    oracle: Option<&dyn Oracle>,
    emails: &[RawEmail],
    config: &CampaignConfig,
    subject_prefix: impl Fn(&RawEmail) -> String + Sync,
) -> Result<Vec<PerturbedEmail>> {
    check_epsilon(config.epsilon)?;
    if !(0.0..=1.0).contains(&config.fraction) {
        return Err(AttackError::BadFraction(config.fraction));
    }
    if config.mode == AttackMode::Guided && oracle.is_none() {
        return Err(AttackError::NeedsOracle);
    }
    let phishing: Vec<usize> = (0..emails.len()).filter(|&i| emails[i].label == Label::Phishing).collect();
    if phishing.is_empty() {
        return Err(AttackError::EmptyPhishing);
    }
    let k = (config.fraction * phishing.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chosen: Vec<usize> = phishing.choose_multiple(&mut rng, k).copied().collect();
    chosen.sort_unstable();
    let alphabet = Alphabet::default();
    chosen
        .par_iter()
        .map(|&i| {
            let e = &emails[i];
            let seed = per_email_seed(config.seed, i);
            let example = match (config.mode, oracle) {
                (AttackMode::Guided, Some(o)) => {
                    let wrapped = Prefixed { inner: o, prefix: subject_prefix(e) };
                    attack_with(&wrapped, &e.body, config.epsilon, seed, &alphabet, AttackOptions::default())?
                }
                (AttackMode::Random, Some(o)) => {
                    let mut ex = perturb_random(&e.body, config.epsilon, seed, &alphabet)?;
                    let wrapped = Prefixed { inner: o, prefix: subject_prefix(e) };
                    let p = wrapped.query(&[ex.original.clone(), ex.perturbed.clone()])?;
                    ex.queries = 2;
                    ex.flipped = is_phish(p[0]) != is_phish(p[1]);
                    ex
                }
                (_, None) => perturb_random(&e.body, config.epsilon, seed, &alphabet)?,
            };
            let email = RawEmail {
                id: format!("{}~adv", e.id),
                source: e.source.clone(),
                subject: e.subject.clone(),
                body: example.perturbed.clone(),
                label: Label::Phishing,
            };
            Ok(PerturbedEmail { original_id: e.id.clone(), email, example })
        })
        .collect()
}

/// JSONL line of a campaign file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub original_id: String,
    pub perturbed_text: String,
    pub ops: Vec<PerturbationOp>,
    pub budget: usize,
    pub ops_used: usize,
    pub flipped: bool,
    pub queries: u64,
    pub mode: AttackMode,
    pub epsilon: f64,
    pub config_digest: String,
}

pub fn write_campaign(path: &Path, results: &[PerturbedEmail], config: &CampaignConfig, config_digest: &str) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in results {
        let rec = CampaignRecord {
            original_id: r.original_id.clone(),
            perturbed_text: r.example.perturbed.clone(),
            ops: r.example.ops.clone(),
            budget: r.example.budget,
            ops_used: r.example.ops_used,
            flipped: r.example.flipped,
            queries: r.example.queries,
            mode: config.mode,
            epsilon: config.epsilon,
            config_digest: config_digest.to_string(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Flags any text containing `needle`.
    struct Needle(&'static str, AtomicU64);

    impl Oracle for Needle {
        fn query(&self, texts: &[String]) -> Result<Vec<[f64; 2]>> {
            self.1.fetch_add(texts.len() as u64, Ordering::Relaxed);
            Ok(texts.iter().map(|t| if t.contains(self.0) { [0.1, 0.9] } else { [0.9, 0.1] }).collect())
        }
        fn queries(&self) -> u64 {
            self.1.load(Ordering::Relaxed)
        }
    }

    fn email(id: &str, body: &str, label: Label) -> RawEmail {
        RawEmail { id: id.into(), source: "t".into(), subject: String::new(), body: body.into(), label }
    }

    #[test]
    fn budget_arithmetic() {
        assert_eq!(budget(0.10, 1500), 150);
        assert_eq!(budget(0.20, 10), 2);
        assert_eq!(budget(0.10, 0), 0);
        assert_eq!(budget(0.10, 11), 2);
        assert_eq!(budget(0.20, 1500), 300);
    }

    #[test]
    fn ops_apply() {
        let sub = |p, c| PerturbationOp { kind: OpKind::Substitute, position: p, char: Some(c) };
        assert_eq!(apply_op("input", &sub(0, confusable('i').unwrap())).unwrap(), "1nput");
        assert_eq!(apply_op("ab", &PerturbationOp { kind: OpKind::Swap, position: 0, char: None }).unwrap(), "ba");
        assert_eq!(apply_op("x", &PerturbationOp { kind: OpKind::Delete, position: 0, char: None }).unwrap(), "");
        assert_eq!(apply_op("ac", &PerturbationOp { kind: OpKind::Insert, position: 1, char: Some('b') }).unwrap(), "abc");
        assert!(matches!(
            apply_op("ab", &PerturbationOp { kind: OpKind::Swap, position: 1, char: None }),
            Err(AttackError::OutOfBounds { position: 1, len: 2 })
        ));
        assert!(apply_op("", &PerturbationOp { kind: OpKind::Delete, position: 0, char: None }).is_err());
    }

    #[test]
    fn needle_oracle_is_defeated_within_budget() {
        let o = Needle("http", AtomicU64::new(0));
        let ex = attack(&o, "please visit http://pay.example now", 0.1, 7).unwrap();
        assert!(ex.flipped);
        assert!(ex.ops_used <= 4);
        assert!(!ex.perturbed.contains("http"));
        assert!(edit_distance(&ex.original, &ex.perturbed) <= ex.budget);
        assert_eq!(ex.queries, o.queries());
    }

    #[test]
    fn clean_prediction_or_zero_budget_is_untouched() {
        let o = Needle("http", AtomicU64::new(0));
        let ex = attack(&o, "lunch at noon", 0.5, 1).unwrap();
        assert_eq!((ex.ops_used, ex.flipped, ex.perturbed.as_str()), (0, false, "lunch at noon"));
        let ex = attack(&o, "http", 0.01, 1).unwrap();
        assert_eq!(ex.budget, 1);
        let ex = attack(&o, "", 0.5, 1).unwrap();
        assert_eq!(ex.budget, 0);
    }

    #[test]
    fn same_seed_same_trace() {
        let o = Needle("CLICK", AtomicU64::new(0));
        let a = attack(&o, "CLICK HERE to verify", 0.3, 5).unwrap();
        let b = attack(&o, "CLICK HERE to verify", 0.3, 5).unwrap();
        assert_eq!(a, b);
        let r1 = perturb_random("some long enough text", 0.3, 9, &Alphabet::default()).unwrap();
        let r2 = perturb_random("some long enough text", 0.3, 9, &Alphabet::default()).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn random_mode_spends_exactly_the_budget() {
        let r = perturb_random("0123456789", 0.2, 3, &Alphabet::default()).unwrap();
        let cost: usize = r.ops.iter().map(|o| o.kind.cost()).sum();
        assert_eq!(cost, 2);
        assert!(edit_distance(&r.original, &r.perturbed) <= 2);
    }

    #[test]
    fn corpus_sampling() {
        let mut emails: Vec<RawEmail> = (0..1000).map(|i| email(&format!("p{i}"), "verify your account now", Label::Phishing)).collect();
        emails.extend((0..50).map(|i| email(&format!("c{i}"), "hello", Label::Clean)));
        let cfg = CampaignConfig { epsilon: 0.2, fraction: 0.4, mode: AttackMode::Random, seed: 1 };
        let out = perturb_corpus(None, &emails, &cfg, |_| String::new()).unwrap();
        assert_eq!(out.len(), 400);
        assert!(out.iter().all(|p| p.email.label == Label::Phishing && p.original_id.starts_with('p')));
        let cfg = CampaignConfig { mode: AttackMode::Guided, ..cfg };
        assert_eq!(perturb_corpus(None, &emails, &cfg, |_| String::new()), Err(AttackError::NeedsOracle));
        let clean: Vec<RawEmail> = emails[1000..].to_vec();
        let cfg = CampaignConfig { mode: AttackMode::Random, ..cfg };
        assert_eq!(perturb_corpus(None, &clean, &cfg, |_| String::new()), Err(AttackError::EmptyPhishing));
    }

    #[test]
    fn guided_corpus_uses_the_subject_prefix() {
        let emails = vec![email("a", "see http://x", Label::Phishing)];
        let o = Needle("http", AtomicU64::new(0));
        let cfg = CampaignConfig { epsilon: 0.2, fraction: 1.0, mode: AttackMode::Guided, seed: 1 };
        let out = perturb_corpus(Some(&o), &emails, &cfg, |_| "subj\n".into()).unwrap();
        assert!(out[0].example.flipped);
    }
}
