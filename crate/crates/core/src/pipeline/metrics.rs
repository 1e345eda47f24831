//! Binary classification metrics from a 2×2 confusion matrix.
//!
//! Rows are true classes, columns predicted classes, both in label order
//! (clean, phishing). A ratio with a zero denominator is 0.

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::Label;

pub type Confusion = [[u64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub weighted: f64,
    pub macro_avg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Averaged,
    pub recall: Averaged,
    pub f1: Averaged,
    /// Indexed by [`Label::index`].
    pub per_class: [ClassMetrics; 2],
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    pub fn from_confusion(c: &Confusion) -> Result<Self> {
        let total: u64 = c.iter().flatten().sum();
        if total == 0 {
            return Err(PipelineError::EmptyConfusion);
        }
        let per_class = [0, 1].map(|k| {
            let tp = c[k][k] as f64;
            let predicted = (c[0][k] + c[1][k]) as f64;
            let support = c[k][0] + c[k][1];
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support as f64);
            ClassMetrics { precision, recall, f1: ratio(2.0 * precision * recall, precision + recall), support }
        });
        let avg = |f: fn(&ClassMetrics) -> f64| Averaged {
            weighted: per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64,
            macro_avg: per_class.iter().map(f).sum::<f64>() / 2.0,
        };
        Ok(Self {
            accuracy: (c[0][0] + c[1][1]) as f64 / total as f64,
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
            per_class,
        })
    }

    pub fn class(&self, label: Label) -> &ClassMetrics {
        &self.per_class[label.index()]
    }
}

/// Confusion matrix of `(truth, prediction)` pairs.
pub fn confusion(pairs: impl IntoIterator<Item = (Label, Label)>) -> Confusion {
    let mut c = [[0u64; 2]; 2];
    for (t, p) in pairs {
        c[t.index()][p.index()] += 1;
    }
    c
}
