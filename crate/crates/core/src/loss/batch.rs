//! Batched losses recorded on a [`Graph`]. All losses sum over the batch.

use std::f64::consts::PI;

use serde::Serialize;

use super::config::{LossConfig, NegativeTerm};
use super::kmeans::ClusterModel;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{CpcdError, Result};

/// `ln(1e-12)`, the floor applied to `log(1 - h′)`.
pub const LOG_FLOOR: f64 = -27.631021115928547;

/// Counters gathered while building the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LossDiagnostics {
    /// `acos` inputs pulled inside `[-1 + 1e-7, 1 - 1e-7]`.
    pub acos_clamps: usize,
    /// Negative pairs whose margin-shifted angle hit `π`.
    pub margin_saturated: usize,
    /// `log(1 - h′)` values raised to the floor.
    pub log_floor_hits: usize,
}

impl LossDiagnostics {
    fn merge(&mut self, o: LossDiagnostics) {
        self.acos_clamps += o.acos_clamps;
        self.margin_saturated += o.margin_saturated;
        self.log_floor_hits += o.log_floor_hits;
    }
}

/// Negative logits `s·cos(clamp(acos(⟨n, t⟩) + m, 0, π)) / τ` for a
/// `B × n` matrix of cosines.
fn margin_logits(g: &mut Graph, sims: Var, cfg: &LossConfig, diag: &mut LossDiagnostics) -> Var {
    let before = g.acos_clamp_count();
    let psi = g.acos(sims);
    diag.acos_clamps += g.acos_clamp_count() - before;
    let shifted = g.add_scalar(psi, cfg.margin);
    diag.margin_saturated += g.value(shifted).data().iter().filter(|&&a| a > PI).count();
    let clamped = g.clamp(shifted, 0.0, PI);
    let c = g.cos(clamped);
    g.scale(c, cfg.scale / cfg.tau)
}

fn check_batch(g: &Graph, target: Var, positives: Var, negatives: Var) -> Result<()> {
    let (st, sp, sn) = (g.shape(target), g.shape(positives), g.shape(negatives));
    if st.len() != 2 || st != sp {
        return Err(CpcdError::ShapeMismatch {
            op: "nce positives",
            lhs: st.to_vec(),
            rhs: sp.to_vec(),
        });
    }
    if sn.len() != 3 || sn[0] != st[0] || sn[2] != st[1] {
        return Err(CpcdError::ShapeMismatch {
            op: "nce negatives",
            lhs: st.to_vec(),
            rhs: sn.to_vec(),
        });
    }
    Ok(())
}

/// `log h = pos − log(e^pos + Σ e^neg)` per row.
fn log_softmax_first(g: &mut Graph, pos: Var, neg: Var) -> Result<Var> {
    let neg_lse = g.logsumexp(neg)?;
    let denom = g.logaddexp(pos, neg_lse)?;
    g.sub(pos, denom)
}

/// Plain estimator `h` for every row of a batch (length `B`).
pub fn estimator_batch(g: &mut Graph, target: Var, positives: Var, negatives: Var, tau: f64) -> Result<Var> {
    check_batch(g, target, positives, negatives)?;
    let pos_cos = g.row_dot(target, positives)?;
    let pos = g.scale(pos_cos, 1.0 / tau);
    let sims = g.batched_matvec(negatives, target)?;
    let neg = g.scale(sims, 1.0 / tau);
    let lh = log_softmax_first(g, pos, neg)?;
    Ok(g.exp(lh))
}

/// Margin estimator `h′` for every row of a batch (length `B`).
pub fn estimator_margin_batch(
    g: &mut Graph,
    target: Var,
    positives: Var,
    negatives: Var,
    cfg: &LossConfig,
) -> Result<(Var, LossDiagnostics)> {
    check_batch(g, target, positives, negatives)?;
    let mut diag = LossDiagnostics::default();
    let pos_cos = g.row_dot(target, positives)?;
    let pos = g.scale(pos_cos, 1.0 / cfg.tau);
    let sims = g.batched_matvec(negatives, target)?;
    let q = margin_logits(g, sims, cfg, &mut diag);
    let lh = log_softmax_first(g, pos, q)?;
    Ok((g.exp(lh), diag))
}

/// Per-anchor NCE loss with angular margin, summed over the batch:
///
/// `−log h′(t, m_I, {m_I′}) − Σ_j log(1 − h′_j)`
///
/// `target` is `B × d`, `positives` `B × d`, `negatives` `B × n × d`; all
/// rows unit norm. Positive logits are plain `⟨m_I, t⟩ / τ`.
pub fn nce_anchor_loss(
    g: &mut Graph,
    target: Var,
    positives: Var,
    negatives: Var,
    cfg: &LossConfig,
) -> Result<(Var, LossDiagnostics)> {
    check_batch(g, target, positives, negatives)?;
    let mut diag = LossDiagnostics::default();
    let pos_cos = g.row_dot(target, positives)?;
    let pos = g.scale(pos_cos, 1.0 / cfg.tau);
    let sims = g.batched_matvec(negatives, target)?;
    let q = margin_logits(g, sims, cfg, &mut diag);
    let log_h = log_softmax_first(g, pos, q)?;

    let log1mh = match cfg.negative_term {
        NegativeTerm::PairwiseSigmoid => {
            // log(1 − σ(q)) = −log(1 + e^q)
            let zero = g.constant(Tensor::zeros(g.shape(q).to_vec()))?;
            let sp = g.logaddexp(q, zero)?;
            g.neg(sp)
        }
        NegativeTerm::Estimator => {
            // Negative j in the positive slot with a plain logit; the other
            // negatives keep their margin logits as noise.
            let p = g.scale(sims, 1.0 / cfg.tau);
            let others = g.logsumexp_excluding(q)?;
            let all = g.logaddexp(p, others)?;
            g.sub(others, all)?
        }
    };
    diag.log_floor_hits += g.value(log1mh).data().iter().filter(|&&v| v < LOG_FLOOR).count();
    let floored = g.clamp(log1mh, LOG_FLOOR, f64::INFINITY);
    let second = g.sum_last_axis(floored)?;
    let per_anchor = g.add(log_h, second)?;
    let total = g.sum(per_anchor);
    Ok((g.neg(total), diag))
}

/// Image-level NCE: target `f̄` against bank positives and negatives.
pub fn nce_loss_image(
    g: &mut Graph,
    positives: Var,
    f_emb: Var,
    negatives: Var,
    cfg: &LossConfig,
) -> Result<(Var, LossDiagnostics)> {
    nce_anchor_loss(g, f_emb, positives, negatives, cfg)
}

/// Patch-level NCE: target `ḡ` against the same bank positives and negatives.
pub fn nce_loss_patch(
    g: &mut Graph,
    positives: Var,
    g_emb: Var,
    negatives: Var,
    cfg: &LossConfig,
) -> Result<(Var, LossDiagnostics)> {
    nce_anchor_loss(g, g_emb, positives, negatives, cfg)
}

/// `λ · a + (1 − λ) · b`.
pub fn convex(g: &mut Graph, a: Var, b: Var, lambda: f64) -> Result<Var> {
    let wa = g.scale(a, lambda);
    let wb = g.scale(b, 1.0 - lambda);
    g.add(wa, wb)
}

pub fn nce_total(g: &mut Graph, image_loss: Var, patch_loss: Var, lambda: f64) -> Result<Var> {
    convex(g, image_loss, patch_loss, lambda)
}

/// Per-instance softmax cross-entropy of `emb` (`B × d`) over the centroid
/// rows, with `assignment[i]` as the target class. Returns a length-`B`
/// vector. Centroids enter as constants.
pub fn cross_level_terms(
    g: &mut Graph,
    emb: Var,
    centroids: &Tensor,
    assignment: &[usize],
    tau: f64,
) -> Result<Var> {
    let s = g.shape(emb).to_vec();
    if s.len() != 2 || centroids.shape().len() != 2 || centroids.cols() != s[1] {
        return Err(CpcdError::ShapeMismatch {
            op: "cross_level",
            lhs: s,
            rhs: centroids.shape().to_vec(),
        });
    }
    if assignment.len() != s[0] {
        return Err(CpcdError::ShapeMismatch {
            op: "cross_level assignment",
            lhs: vec![s[0]],
            rhs: vec![assignment.len()],
        });
    }
    let k = centroids.rows();
    if let Some(&bad) = assignment.iter().find(|&&a| a >= k) {
        return Err(CpcdError::OutOfRange { index: bad, len: k });
    }
    let ct = {
        let mut t = Tensor::zeros([s[1], k]);
        for j in 0..k {
            for (c, v) in centroids.row(j).iter().enumerate() {
                t.data_mut()[c * k + j] = *v;
            }
        }
        g.constant(t)?
    };
    let cos = g.matmul(emb, ct)?;
    let logits = g.scale(cos, 1.0 / tau);
    let lse = g.logsumexp(logits)?;
    let picked = g.select_last_axis(logits, assignment)?;
    g.sub(lse, picked)
}

/// Image embeddings against patch-level centroids, each instance targeting
/// the patch-level cluster of its own patch view.
pub fn cross_level_term_image(g: &mut Graph, f_bar: Var, patch_clusters: &ClusterModel, tau: f64) -> Result<Var> {
    cross_level_terms(g, f_bar, &patch_clusters.centroids, &patch_clusters.assignments, tau)
}

/// Patch embeddings against image-level centroids, each instance targeting
/// the image-level cluster of its own image view.
pub fn cross_level_term_patch(g: &mut Graph, g_bar: Var, image_clusters: &ClusterModel, tau: f64) -> Result<Var> {
    cross_level_terms(g, g_bar, &image_clusters.centroids, &image_clusters.assignments, tau)
}

/// Returns `(gcld, image_term, patch_term)` where
/// `gcld = λ · Σ_i image_term_i + (1 − λ) · Σ_i patch_term_i`.
pub fn gcld_loss(
    g: &mut Graph,
    f_bar: Var,
    g_bar: Var,
    image_clusters: &ClusterModel,
    patch_clusters: &ClusterModel,
    lambda: f64,
    tau: f64,
) -> Result<(Var, Var, Var)> {
    if g.shape(f_bar) != g.shape(g_bar) {
        return Err(CpcdError::ShapeMismatch {
            op: "gcld",
            lhs: g.shape(f_bar).to_vec(),
            rhs: g.shape(g_bar).to_vec(),
        });
    }
    if image_clusters.k() != patch_clusters.k() {
        return Err(CpcdError::input(format!(
            "image and patch clusterings use k = {} and {}",
            image_clusters.k(),
            patch_clusters.k()
        )));
    }
    let ti = cross_level_term_image(g, f_bar, patch_clusters, tau)?;
    let ti = g.sum(ti);
    let tp = cross_level_term_patch(g, g_bar, image_clusters, tau)?;
    let tp = g.sum(tp);
    Ok((convex(g, ti, tp, lambda)?, ti, tp))
}

/// Everything the composite loss needs for one batch.
pub struct LossInputs<'a> {
    /// Normalized image embeddings `f̄`, `B × d`.
    pub f_bar: Var,
    /// Normalized patch embeddings `ḡ`, `B × d`.
    pub g_bar: Var,
    /// Bank rows `m_I`, `B × d`, constant.
    pub positives: Var,
    /// Bank negatives `m_I′`, `B × n × d`, constant.
    pub negatives: Var,
    pub image_clusters: &'a ClusterModel,
    pub patch_clusters: &'a ClusterModel,
}

#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub nce_image: Var,
    pub nce_patch: Var,
    pub nce_total: Var,
    pub gcld_image_term: Var,
    pub gcld_patch_term: Var,
    pub gcld: Var,
    pub cpcd: Var,
    pub diagnostics: LossDiagnostics,
}

/// Plain values of a [`LossBreakdown`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossValues {
    pub nce_image: f64,
    pub nce_patch: f64,
    pub nce_total: f64,
    pub gcld_image_term: f64,
    pub gcld_patch_term: f64,
    pub gcld: f64,
    pub cpcd: f64,
}

impl LossBreakdown {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |x: Var| g.value(x).item();
        LossValues {
            nce_image: v(self.nce_image),
            nce_patch: v(self.nce_patch),
            nce_total: v(self.nce_total),
            gcld_image_term: v(self.gcld_image_term),
            gcld_patch_term: v(self.gcld_patch_term),
            gcld: v(self.gcld),
            cpcd: v(self.cpcd),
        }
    }
}

/// `λ′ · GCLD + (1 − λ′) · (λ · NCE_image + (1 − λ) · NCE_patch)`.
pub fn cpcd_loss(g: &mut Graph, inputs: &LossInputs<'_>, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    let mut diagnostics = LossDiagnostics::default();
    let (nce_image, d1) = nce_loss_image(g, inputs.positives, inputs.f_bar, inputs.negatives, cfg)?;
    let (nce_patch, d2) = nce_loss_patch(g, inputs.positives, inputs.g_bar, inputs.negatives, cfg)?;
    diagnostics.merge(d1);
    diagnostics.merge(d2);
    let nce = nce_total(g, nce_image, nce_patch, cfg.lambda)?;
    let (gcld, ti, tp) = gcld_loss(
        g,
        inputs.f_bar,
        inputs.g_bar,
        inputs.image_clusters,
        inputs.patch_clusters,
        cfg.lambda,
        cfg.tau,
    )?;
    let cpcd = convex(g, gcld, nce, cfg.lambda_prime)?;
    Ok(LossBreakdown {
        nce_image,
        nce_patch,
        nce_total: nce,
        gcld_image_term: ti,
        gcld_patch_term: tp,
        gcld,
        cpcd,
        diagnostics,
    })
}

