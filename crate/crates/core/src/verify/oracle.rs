//! Reference implementation of every loss term with explicit loops over
//! plain vectors. It shares no code with the graph implementation: no
//! log-sum-exp tricks, no tensors, direct evaluation of each formula.

use crate::loss::{LossConfig, NegativeTerm};

fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Same interior clamp as the graph `acos`.
fn clamped_acos(c: f64) -> f64 {
    let lim = 1.0 - 1e-7;
    let c = if c > lim {
        lim
    } else if c < -lim {
        -lim
    } else {
        c
    };
    c.acos()
}

pub fn negative_logit(neg: &[f64], target: &[f64], cfg: &LossConfig) -> f64 {
    let mut angle = clamped_acos(inner(neg, target)) + cfg.margin;
    if angle > std::f64::consts::PI {
        angle = std::f64::consts::PI;
    }
    cfg.scale * angle.cos() / cfg.tau
}

/// Plain estimator `h`.
pub fn estimator(target: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> f64 {
    let top = (inner(positive, target) / tau).exp();
    let mut bottom = top;
    for n in negatives {
        bottom += (inner(n, target) / tau).exp();
    }
    top / bottom
}

/// Margin estimator `h′`.
pub fn estimator_margin(target: &[f64], positive: &[f64], negatives: &[Vec<f64>], cfg: &LossConfig) -> f64 {
    let top = (inner(positive, target) / cfg.tau).exp();
    let mut bottom = top;
    for n in negatives {
        bottom += negative_logit(n, target, cfg).exp();
    }
    top / bottom
}

/// `1 − h′_j`, written as noise / (signal + noise) to avoid cancellation.
fn one_minus_h(j: usize, target: &[f64], negatives: &[Vec<f64>], cfg: &LossConfig) -> f64 {
    match cfg.negative_term {
        NegativeTerm::PairwiseSigmoid => 1.0 / (negative_logit(&negatives[j], target, cfg).exp() + 1.0),
        NegativeTerm::Estimator => {
            let signal = (inner(&negatives[j], target) / cfg.tau).exp();
            let mut noise = 0.0;
            for (l, n) in negatives.iter().enumerate() {
                if l != j {
                    noise += negative_logit(n, target, cfg).exp();
                }
            }
            noise / (signal + noise)
        }
    }
}

/// One anchor's `−log h′ − Σ_j log(1 − h′_j)` with the `1e-12` floor.
pub fn nce_anchor(target: &[f64], positive: &[f64], negatives: &[Vec<f64>], cfg: &LossConfig) -> f64 {
    let mut loss = -estimator_margin(target, positive, negatives, cfg).ln();
    for j in 0..negatives.len() {
        let v = one_minus_h(j, target, negatives, cfg);
        loss -= if v < 1e-12 { 1e-12f64.ln() } else { v.ln() };
    }
    loss
}

/// NCE loss summed over a batch; used for both image and patch targets.
pub fn nce_loss(targets: &[Vec<f64>], positives: &[Vec<f64>], negatives: &[Vec<Vec<f64>>], cfg: &LossConfig) -> f64 {
    let mut total = 0.0;
    for i in 0..targets.len() {
        total += nce_anchor(&targets[i], &positives[i], &negatives[i], cfg);
    }
    total
}

pub fn nce_total(image: f64, patch: f64, lambda: f64) -> f64 {
    lambda * image + (1.0 - lambda) * patch
}

/// `−log( e^{⟨e, C_a⟩/τ} / (e^{⟨e, C_a⟩/τ} + Σ_{j≠a} e^{⟨e, C_j⟩/τ}) )`.
pub fn cross_level(emb: &[f64], centroids: &[Vec<f64>], assigned: usize, tau: f64) -> f64 {
    let top = (inner(emb, &centroids[assigned]) / tau).exp();
    let mut bottom = top;
    for (j, c) in centroids.iter().enumerate() {
        if j != assigned {
            bottom += (inner(emb, c) / tau).exp();
        }
    }
    -(top / bottom).ln()
}

/// A batch with fixed clusterings, in plain-vector form.
#[derive(Clone, Debug)]
pub struct Instance {
    pub f_bar: Vec<Vec<f64>>,
    pub g_bar: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
    pub image_centroids: Vec<Vec<f64>>,
    pub image_assign: Vec<usize>,
    pub patch_centroids: Vec<Vec<f64>>,
    pub patch_assign: Vec<usize>,
}

/// Every term of the composite loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleValues {
    pub nce_image: f64,
    pub nce_patch: f64,
    pub nce_total: f64,
    pub gcld_image_term: f64,
    pub gcld_patch_term: f64,
    pub gcld: f64,
    pub cpcd: f64,
}

pub fn evaluate(inst: &Instance, cfg: &LossConfig) -> OracleValues {
    let nce_image = nce_loss(&inst.f_bar, &inst.positives, &inst.negatives, cfg);
    let nce_patch = nce_loss(&inst.g_bar, &inst.positives, &inst.negatives, cfg);
    let total = nce_total(nce_image, nce_patch, cfg.lambda);
    let mut ti = 0.0;
    let mut tp = 0.0;
    for i in 0..inst.f_bar.len() {
        ti += cross_level(&inst.f_bar[i], &inst.patch_centroids, inst.patch_assign[i], cfg.tau);
        tp += cross_level(&inst.g_bar[i], &inst.image_centroids, inst.image_assign[i], cfg.tau);
    }
    let gcld = cfg.lambda * ti + (1.0 - cfg.lambda) * tp;
    OracleValues {
        nce_image,
        nce_patch,
        nce_total: total,
        gcld_image_term: ti,
        gcld_patch_term: tp,
        gcld,
        cpcd: cfg.lambda_prime * gcld + (1.0 - cfg.lambda_prime) * total,
    }
}
