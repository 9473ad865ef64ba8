//! Classification metrics over a confusion matrix (rows true, columns
//! predicted).

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{CpcdError, Result};

/// Square matrix of counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        ConfusionMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(CpcdError::input(format!(
                "confusion matrix must be square and non-empty, got {} rows of lengths {:?}",
                n,
                rows.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        Ok(ConfusionMatrix {
            n,
            counts: rows.concat(),
        })
    }

    /// Tallies `(truth, prediction)` pairs over `n` classes.
    pub fn from_predictions(truth: &[usize], pred: &[usize], n: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(CpcdError::input(format!(
                "{} labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut m = ConfusionMatrix::zeros(n);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= n || p >= n {
                return Err(CpcdError::OutOfRange {
                    index: t.max(p),
                    len: n,
                });
            }
            m.counts[t * n + p] += 1;
        }
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.n).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n).map(<[u64]>::to_vec).collect()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(CpcdError::input("confusion matrices differ in size"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for j in 0..self.n {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for (i, row) in self.rows().iter().enumerate() {
            s.push_str(&i.to_string());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

/// One-vs-rest counts for a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassCounts {
    /// `tp / (tp + fn)`.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `tn / (tn + fp)`.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    /// `2tp / (2tp + fp + fn)`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassCounts>,
    pub top1: f64,
    /// Needs class scores, so absent when built from counts alone.
    pub top2: Option<f64>,
    pub f1_macro: f64,
    pub recall_macro: f64,
    pub specificity_macro: f64,
    /// The swapped formulas some reports print: `tp / (tp + fn)` labelled as
    /// specificity and `tn / (tn + fp)` labelled as recall.
    pub specificity_as_printed: f64,
    pub recall_as_printed: f64,
    pub qwk: f64,
}

/// Quadratic weighted kappa `1 − Σ w·O / Σ w·E` with
/// `w_ij = (i − j)² / (n − 1)²` and `E` the outer product of the marginals
/// scaled to the total. Defined as 1 when both sums vanish.
pub fn quadratic_weighted_kappa(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.total();
    if total == 0 {
        return Err(CpcdError::input("confusion matrix has no counts"));
    }
    let n = m.n_classes();
    if n == 1 {
        return Ok(1.0);
    }
    let rows: Vec<f64> = (0..n).map(|i| m.row_sum(i) as f64).collect();
    let cols: Vec<f64> = (0..n).map(|j| m.col_sum(j) as f64).collect();
    let scale = ((n - 1) * (n - 1)) as f64;
    let (mut observed, mut expected) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = ((i as f64 - j as f64).powi(2)) / scale;
            observed += w * m.get(i, j) as f64;
            expected += w * rows[i] * cols[j] / total as f64;
        }
    }
    if observed == 0.0 && expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - observed / expected)
}

/// All count-based metrics, macro-averaged over classes.
pub fn compute_metrics(m: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = m.total();
    if total == 0 {
        return Err(CpcdError::input("confusion matrix has no counts"));
    }
    let n = m.n_classes();
    let per_class: Vec<ClassCounts> = (0..n)
        .map(|i| {
            let tp = m.get(i, i);
            let fp = m.col_sum(i) - tp;
            let fn_ = m.row_sum(i) - tp;
            ClassCounts {
                tp,
                fp,
                fn_,
                tn: total - tp - fp - fn_,
            }
        })
        .collect();
    let macro_avg = |f: fn(&ClassCounts) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;
    let recall = macro_avg(ClassCounts::recall);
    let specificity = macro_avg(ClassCounts::specificity);
    Ok(MetricsReport {
        confusion: m.clone(),
        top1: (0..n).map(|i| m.get(i, i)).sum::<u64>() as f64 / total as f64,
        top2: None,
        f1_macro: macro_avg(ClassCounts::f1),
        recall_macro: recall,
        specificity_macro: specificity,
        specificity_as_printed: recall,
        recall_as_printed: specificity,
        qwk: quadratic_weighted_kappa(m)?,
        per_class,
    })
}

/// Position of class `label` when a score row is sorted descending, ties
/// going to the lower class index.
fn rank_of(row: &[f64], label: usize) -> usize {
    let s = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

/// Fraction of rows whose label is among the `k` highest scores.
pub fn topk_accuracy(scores: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let (b, n) = (scores.rows(), scores.cols());
    if k == 0 || k > n {
        return Err(CpcdError::input(format!("k = {k} must lie in 1..={n}")));
    }
    if labels.len() != b {
        return Err(CpcdError::input(format!("{b} score rows but {} labels", labels.len())));
    }
    let mut hits = 0;
    for (i, &l) in labels.iter().enumerate() {
        if l >= n {
            return Err(CpcdError::OutOfRange { index: l, len: n });
        }
        if rank_of(scores.row(i), l) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / b as f64)
}

/// Index of the highest score, ties to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Metrics from class scores: predictions by argmax, plus top-1 and top-2.
pub fn metrics_from_scores(scores: &Tensor, labels: &[usize]) -> Result<MetricsReport> {
    let n = scores.cols();
    let pred: Vec<usize> = (0..scores.rows()).map(|i| argmax(scores.row(i))).collect();
    let m = ConfusionMatrix::from_predictions(labels, &pred, n)?;
    let mut report = compute_metrics(&m)?;
    report.top1 = topk_accuracy(scores, labels, 1)?;
    report.top2 = if n >= 2 { Some(topk_accuracy(scores, labels, 2)?) } else { None };
    Ok(report)
}
