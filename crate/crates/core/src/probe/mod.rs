//! Frozen-encoder linear probe with stratified cross-validation.

mod metrics;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    argmax, compute_metrics, metrics_from_scores, quadratic_weighted_kappa, topk_accuracy, ClassCounts,
    ConfusionMatrix, MetricsReport,
};

use crate::autodiff::Tensor;
use crate::data::{Dataset, Image};
use crate::error::{CpcdError, Result};
use crate::model::{EmbeddingBatch, FeatureStage, Network};
use crate::rng::{purpose, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub folds: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Encoder output (default) or image-head output.
    pub stage: FeatureStage,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            folds: 5,
            learning_rate: 1e-4,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            stage: FeatureStage::Encoder,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(CpcdError::config("probe needs at least 2 folds"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CpcdError::config("probe learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CpcdError::config("probe epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Un-augmented features for every sample, in id order, with labels.
/// This is the only place the pipeline reads labels.
pub fn extract_embeddings(network: &Network, dataset: &Dataset, stage: FeatureStage) -> Result<(EmbeddingBatch, Vec<usize>)> {
    let [h, w, c] = dataset.image_shape();
    if c != network.config().in_channels {
        return Err(CpcdError::input(format!(
            "dataset images are {h}×{w}×{c}, encoder expects {} channels",
            network.config().in_channels
        )));
    }
    let images: Vec<&Image> = dataset.samples().iter().map(|s| &s.image).collect();
    Ok((network.embed(&images, stage)?, dataset.labels()))
}

/// Per-feature mean and standard deviation from training rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor, rows: &[usize]) -> Self {
        let d = x.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for &i in rows {
            var.iter_mut()
                .zip(x.row(i))
                .zip(&mean)
                .for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Softmax regression on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeModel {
    /// `n_features × n_classes`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_features: usize,
    pub n_classes: usize,
    pub standardizer: Standardizer,
}

impl ProbeModel {
    fn logits(&self, z: &[f64]) -> Vec<f64> {
        let c = self.n_classes;
        let mut out = self.bias.clone();
        for (f, &v) in z.iter().enumerate() {
            let w = &self.weights[f * c..(f + 1) * c];
            out.iter_mut().zip(w).for_each(|(o, w)| *o += v * w);
        }
        out
    }

    /// Class logits for the given rows of `x`.
    pub fn scores(&self, x: &Tensor, rows: &[usize]) -> Result<Tensor> {
        if x.cols() != self.n_features {
            return Err(CpcdError::ShapeMismatch {
                op: "probe scores",
                lhs: vec![self.n_features],
                rhs: x.shape().to_vec(),
            });
        }
        let data = rows
            .iter()
            .flat_map(|&i| self.logits(&self.standardizer.apply(x.row(i))))
            .collect();
        Tensor::new([rows.len(), self.n_classes], data)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Zero-initialized softmax regression trained by minibatch SGD on the
/// summed cross-entropy. `tag` separates the shuffling streams of folds.
pub fn fit_probe(
    x: &Tensor,
    labels: &[usize],
    rows: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
    tag: u64,
) -> Result<ProbeModel> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(CpcdError::input("probe has no training rows"));
    }
    let d = x.cols();
    let standardizer = Standardizer::fit(x, rows);
    let z: Vec<Vec<f64>> = rows.iter().map(|&i| standardizer.apply(x.row(i))).collect();
    let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(CpcdError::OutOfRange {
            index: bad,
            len: n_classes,
        });
    }
    let mut model = ProbeModel {
        weights: vec![0.0; d * n_classes],
        bias: vec![0.0; n_classes],
        n_features: d,
        n_classes,
        standardizer,
    };
    let mut order: Vec<usize> = (0..z.len()).collect();
    let mut gw = vec![0.0; d * n_classes];
    let mut gb = vec![0.0; n_classes];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, &[purpose::PROBE, tag, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            gw.iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
            for &i in batch {
                let mut delta = softmax(&model.logits(&z[i]));
                delta[y[i]] -= 1.0;
                for (f, &v) in z[i].iter().enumerate() {
                    gw[f * n_classes..(f + 1) * n_classes]
                        .iter_mut()
                        .zip(&delta)
                        .for_each(|(g, dl)| *g += v * dl);
                }
                gb.iter_mut().zip(&delta).for_each(|(g, dl)| *g += dl);
            }
            model.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= cfg.learning_rate * g);
            model.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= cfg.learning_rate * g);
        }
    }
    Ok(model)
}

/// Fold index of every sample. Each class is shuffled and dealt round-robin,
/// so every fold holds every class; classes with fewer samples than folds
/// are rejected.
pub fn stratified_folds(labels: &[usize], n_classes: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(CpcdError::OutOfRange {
                index: l,
                len: n_classes,
            });
        }
        by_class[l].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    if counts.iter().any(|&c| c < folds) {
        return Err(CpcdError::Stratification(format!(
            "{folds} folds need at least {folds} samples per class, class counts are {counts:?}"
        )));
    }
    let mut fold_of = vec![0; labels.len()];
    for (c, ids) in by_class.iter_mut().enumerate() {
        ids.shuffle(&mut stream(seed, &[purpose::PROBE, u64::MAX, c as u64]));
        for (k, &i) in ids.iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    Ok(fold_of)
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: MetricsReport,
}

/// Fold-averaged metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub top1: f64,
    pub top2: f64,
    pub f1_macro: f64,
    pub recall_macro: f64,
    pub specificity_macro: f64,
    pub specificity_as_printed: f64,
    pub recall_as_printed: f64,
    pub qwk: f64,
}

impl MeanMetrics {
    fn from_reports(reports: &[&MetricsReport]) -> Self {
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        MeanMetrics {
            top1: mean(&|r| r.top1),
            top2: mean(&|r| r.top2.unwrap_or(1.0)),
            f1_macro: mean(&|r| r.f1_macro),
            recall_macro: mean(&|r| r.recall_macro),
            specificity_macro: mean(&|r| r.specificity_macro),
            specificity_as_printed: mean(&|r| r.specificity_as_printed),
            recall_as_printed: mean(&|r| r.recall_as_printed),
            qwk: mean(&|r| r.qwk),
        }
    }
}

pub const REPORT_HEADER: &str =
    "fold,top1,top2,f1_macro,recall_macro,specificity_macro,specificity_as_printed,recall_as_printed,qwk";

#[derive(Clone, Debug, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean: MeanMetrics,
}

impl CvReport {
    fn row(label: &str, m: &MeanMetrics) -> String {
        format!(
            "{label},{},{},{},{},{},{},{},{}",
            m.top1,
            m.top2,
            m.f1_macro,
            m.recall_macro,
            m.specificity_macro,
            m.specificity_as_printed,
            m.recall_as_printed,
            m.qwk
        )
    }

    /// One row per fold plus a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for f in &self.folds {
            s.push_str(&Self::row(&f.fold.to_string(), &MeanMetrics::from_reports(&[&f.metrics])));
            s.push('\n');
        }
        s.push_str(&Self::row("mean", &self.mean));
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "fold", "top1", "top2", "f1", "recall", "spec", "qwk"
        );
        let line = |label: &str, m: &MeanMetrics| {
            format!(
                "{:<6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}\n",
                label, m.top1, m.top2, m.f1_macro, m.recall_macro, m.specificity_macro, m.qwk
            )
        };
        for f in &self.folds {
            s.push_str(&line(&f.fold.to_string(), &MeanMetrics::from_reports(&[&f.metrics])));
        }
        s.push_str(&line("mean", &self.mean));
        s
    }
}

/// Stratified k-fold evaluation, then a final probe on all rows.
pub fn train_probe(x: &Tensor, labels: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<(ProbeModel, CvReport)> {
    cfg.validate()?;
    if labels.len() != x.rows() {
        return Err(CpcdError::input(format!(
            "{} embeddings but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    let fold_of = stratified_folds(labels, n_classes, cfg.folds, cfg.seed)?;
    let folds = (0..cfg.folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == k).collect();
            let model = fit_probe(x, labels, &train, n_classes, cfg, k as u64)?;
            let scores = model.scores(x, &test)?;
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            Ok(FoldReport {
                fold: k,
                train_size: train.len(),
                test_size: test.len(),
                metrics: metrics_from_scores(&scores, &truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = MeanMetrics::from_reports(&folds.iter().map(|f| &f.metrics).collect::<Vec<_>>());
    let all: Vec<usize> = (0..labels.len()).collect();
    let model = fit_probe(x, labels, &all, n_classes, cfg, cfg.folds as u64)?;
    Ok((model, CvReport { folds, mean }))
}

/// Extracts features with `network` and cross-validates a probe on them.
pub fn evaluate_network(network: &Network, dataset: &Dataset, cfg: &ProbeConfig) -> Result<(ProbeModel, CvReport)> {
    let (emb, labels) = extract_embeddings(network, dataset, cfg.stage)?;
    train_probe(emb.data(), &labels, dataset.n_classes(), cfg)
}
