//! Reference implementations the library is checked against.

/// Levenshtein distance over chars by the textbook full-table recurrence.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Per-class precision, recall and F1 with their macro and weighted means,
/// computed directly from the counts of each class taken as positive.
pub struct RefMetrics {
    pub accuracy: f64,
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub macro_avg: [f64; 3],
    pub weighted: [f64; 3],
}

pub fn reference_metrics(c: [[u64; 2]; 2]) -> RefMetrics {
    let n = (c[0][0] + c[0][1] + c[1][0] + c[1][1]) as f64;
    let mut precision = [0.0; 2];
    let mut recall = [0.0; 2];
    let mut f1 = [0.0; 2];
    let mut support = [0.0; 2];
    for k in 0..2 {
        let o = 1 - k;
        let tp = c[k][k] as f64;
        let fp = c[o][k] as f64;
        let fn_ = c[k][o] as f64;
        precision[k] = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        recall[k] = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        f1[k] = if precision[k] + recall[k] > 0.0 { 2.0 * precision[k] * recall[k] / (precision[k] + recall[k]) } else { 0.0 };
        support[k] = tp + fn_;
    }
    let mean = |v: [f64; 2]| (v[0] + v[1]) / 2.0;
    let wmean = |v: [f64; 2]| (v[0] * support[0] + v[1] * support[1]) / n;
    RefMetrics {
        accuracy: (c[0][0] + c[1][1]) as f64 / n,
        precision,
        recall,
        f1,
        macro_avg: [mean(precision), mean(recall), mean(f1)],
        weighted: [wmean(precision), wmean(recall), wmean(f1)],
    }
}
