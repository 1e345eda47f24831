//! Stratified, seeded train/validation/test split.
//!
//! Each class is shuffled independently, then the classes are merged so that
//! every prefix of the merged order holds each class in proportion to its
//! share of the store (the `j`-th email of class `c` sits at key
//! `(j + ½) / n_c`). Cutting that order at `round(0.70·N)` and
//! `round(0.85·N)` gives global sizes exact to rounding and per-class sizes
//! within one email of their targets.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusStore, Label, RawEmail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        Self([0.70, 0.15, 0.15])
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let r = self.0;
        if r.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 || r[0] <= 0.0 {
            return Err(CorpusError::BadRatios(r));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<RawEmail>,
    pub validation: Vec<RawEmail>,
    pub test: Vec<RawEmail>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

/// Persisted form of a split: the seed, ratios and the three id lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Store positions in the proportional merge order described in the module
/// docs.
pub fn stratified_order(labels: &[Label], seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: Vec<Vec<usize>> = Vec::new();
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(CorpusError::ClassAbsent(class));
        }
        members.shuffle(&mut rng);
        per_class.push(members);
    }
    // (class, rank within class); compare (2j+1)/n_c exactly via cross products.
    let mut slots: Vec<(usize, usize)> =
        per_class.iter().enumerate().flat_map(|(c, m)| (0..m.len()).map(move |j| (c, j))).collect();
    slots.sort_by(|&(ca, ja), &(cb, jb)| {
        let lhs = (2 * ja as u128 + 1) * per_class[cb].len() as u128;
        let rhs = (2 * jb as u128 + 1) * per_class[ca].len() as u128;
        lhs.cmp(&rhs).then(ca.cmp(&cb))
    });
    Ok(slots.into_iter().map(|(c, j)| per_class[c][j]).collect())
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Sizes of the three parts for `n` items.
pub(crate) fn cut_points(n: usize, ratios: SplitRatios) -> (usize, usize) {
    let r = ratios.0;
    let train = round_half_up(r[0] * n as f64).min(n);
    let train_val = round_half_up((r[0] + r[1]) * n as f64).clamp(train, n);
    (train, train_val)
}

impl CorpusSplit {
    pub fn new(store: &CorpusStore, ratios: SplitRatios, seed: u64) -> Result<Self> {
        ratios.validate()?;
        let emails = store.emails();
        let labels: Vec<Label> = emails.iter().map(|e| e.label).collect();
        for class in Label::ALL {
            let n = store.count_label(class);
            if n > 0 && n < 10 {
                log::warn!("only {n} {class} emails; split proportions will be coarse");
            }
        }
        let order = stratified_order(&labels, seed)?;
        let (a, b) = cut_points(order.len(), ratios);
        let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| emails[i].clone()).collect();
        Ok(Self { train: take(0..a), validation: take(a..b), test: take(b..order.len()), seed, ratios })
    }

    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[RawEmail]| v.iter().map(|e| e.id.clone()).collect();
        SplitManifest {
            seed: self.seed,
            ratios: self.ratios.0,
            train: ids(&self.train),
            validation: ids(&self.validation),
            test: ids(&self.test),
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SplitManifest {
    pub fn resolve(&self, store: &CorpusStore) -> Result<CorpusSplit> {
        let index: std::collections::HashMap<&str, &RawEmail> = store.emails().iter().map(|e| (e.id.as_str(), e)).collect();
        let pick = |ids: &[String]| -> Result<Vec<RawEmail>> {
            ids.iter().map(|id| index.get(id.as_str()).map(|e| (*e).clone()).ok_or_else(|| CorpusError::UnknownId(id.clone()))).collect()
        };
        Ok(CorpusSplit {
            train: pick(&self.train)?,
            validation: pick(&self.validation)?,
            test: pick(&self.test)?,
            seed: self.seed,
            ratios: SplitRatios(self.ratios),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json).map_err(|source| CorpusError::Unwritable { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Unreadable { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| CorpusError::BadStoreLine { line: 0, reason: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(n_clean: usize, n_phish: usize) -> CorpusStore {
        CorpusStore::from_emails((0..n_clean + n_phish).map(|i| RawEmail {
            id: format!("e{i}"),
            source: "t".into(),
            subject: String::new(),
            body: format!("body {i}"),
            label: if i < n_clean { Label::Clean } else { Label::Phishing },
        }))
    }

    fn count(v: &[RawEmail], l: Label) -> usize {
        v.iter().filter(|e| e.label == l).count()
    }

    #[test]
    fn hundred_balanced_emails() {
        let s = CorpusSplit::new(&store(50, 50), SplitRatios::default(), 42).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 15, 15));
        assert_eq!(count(&s.train, Label::Clean), 35);
        assert_eq!(count(&s.train, Label::Phishing), 35);
    }

    #[test]
    fn reference_corpus_sizes() {
        // The exact cut sizes for the reference aggregate; the class mix does
        // not change them.
        assert_eq!(cut_points(232_769, SplitRatios::default()), (162_938, 162_938 + 34_916));
        let (a, b) = cut_points(227_973, SplitRatios::default());
        assert_eq!((a, b - a, 227_973 - b), (159_581, 34_196, 34_196));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let st = store(40, 25);
        let a = CorpusSplit::new(&st, SplitRatios::default(), 7).unwrap().manifest();
        let b = CorpusSplit::new(&st, SplitRatios::default(), 7).unwrap().manifest();
        let c = CorpusSplit::new(&st, SplitRatios::default(), 8).unwrap().manifest();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn missing_class_is_an_error() {
        assert!(matches!(CorpusSplit::new(&store(20, 0), SplitRatios::default(), 1), Err(CorpusError::ClassAbsent(Label::Phishing))));
    }

    #[test]
    fn manifest_resolves_back() {
        let st = store(12, 12);
        let s = CorpusSplit::new(&st, SplitRatios::default(), 3).unwrap();
        assert_eq!(s.manifest().resolve(&st).unwrap(), s);
    }

    proptest! {
        #[test]
        fn partitions_and_stratifies(n_clean in 10usize..300, n_phish in 10usize..300, seed in any::<u64>()) {
            let st = store(n_clean, n_phish);
            let s = CorpusSplit::new(&st, SplitRatios::default(), seed).unwrap();
            prop_assert_eq!(s.len(), st.len());
            let mut ids: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).map(|e| e.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), st.len());
            for (l, n) in [(Label::Clean, n_clean), (Label::Phishing, n_phish)] {
                let target = 0.70 * n as f64;
                prop_assert!((count(&s.train, l) as f64 - target).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
