//! Single-anchor estimators on plain vectors.
//!
//! These clamp cosines to `[-1, 1]` only; the graph versions additionally
//! keep `acos` inputs `1e-7` inside the interval so gradients stay bounded.

use std::f64::consts::PI;

use crate::autodiff::{dot, l2_norm, lse};
use crate::error::{CpcdError, Result};

const UNIT_TOL: f64 = 1e-6;

fn check_unit(vs: &[&[f64]]) -> Result<()> {
    let norms: Vec<f64> = vs.iter().map(|v| l2_norm(v)).collect();
    if norms.iter().any(|n| (n - 1.0).abs() > UNIT_TOL) {
        return Err(CpcdError::NotUnit(norms));
    }
    if vs.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(CpcdError::ShapeMismatch {
            op: "similarity",
            lhs: vec![vs[0].len()],
            rhs: vs.iter().map(|v| v.len()).collect(),
        });
    }
    Ok(())
}

/// `⟨a, b⟩` for unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_unit(&[a, b])?;
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

/// `s · cos(clamp(acos⟨a, b⟩ + m, 0, π))`.
pub fn margin_similarity(a: &[f64], b: &[f64], margin: f64, scale: f64) -> Result<f64> {
    let c = cosine_similarity(a, b)?;
    Ok(margin_cos(c, margin, scale))
}

fn margin_cos(cos: f64, margin: f64, scale: f64) -> f64 {
    scale * (cos.clamp(-1.0, 1.0).acos() + margin).clamp(0.0, PI).cos()
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(CpcdError::config(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

fn softmax_first(pos_logit: f64, neg_logits: &[f64]) -> f64 {
    if neg_logits.is_empty() {
        return 1.0;
    }
    let mut all = Vec::with_capacity(neg_logits.len() + 1);
    all.push(pos_logit);
    all.extend_from_slice(neg_logits);
    (pos_logit - lse(&all)).exp()
}

/// Probability that `positive` rather than any of `negatives` matches
/// `target` under a temperature-`τ` softmax over cosines.
pub fn nce_estimator<V: AsRef<[f64]>>(target: &[f64], positive: &[f64], negatives: &[V], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_unit(&[target, positive])?;
    let mut negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        negs.push(cosine_similarity(n.as_ref(), target)? / tau);
    }
    Ok(softmax_first(cosine_similarity(positive, target)? / tau, &negs))
}

/// As [`nce_estimator`] but each negative logit is
/// `margin_similarity(neg, target, m, s) / τ`.
pub fn nce_estimator_margin<V: AsRef<[f64]>>(
    target: &[f64],
    positive: &[f64],
    negatives: &[V],
    tau: f64,
    margin: f64,
    scale: f64,
) -> Result<f64> {
    check_tau(tau)?;
    check_unit(&[target, positive])?;
    let mut negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        negs.push(margin_similarity(n.as_ref(), target, margin, scale)? / tau);
    }
    Ok(softmax_first(cosine_similarity(positive, target)? / tau, &negs))
}
