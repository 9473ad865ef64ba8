//! The composite objective: margin NCE over image and patch views,
//! per-batch spherical k-means, and cross-level group discrimination.

mod batch;
mod config;
mod kmeans;
mod scalar;

pub use batch::{
    convex, cpcd_loss, estimator_batch, estimator_margin_batch, cross_level_term_image, cross_level_term_patch, cross_level_terms, gcld_loss,
    nce_anchor_loss, nce_loss_image, nce_loss_patch, nce_total, LossBreakdown, LossDiagnostics, LossInputs,
    LossValues, LOG_FLOOR,
};
pub use config::{LossArm, LossConfig, NegativeTerm};
pub use kmeans::{adjusted_rand_index, spherical_kmeans, ClusterModel};
pub use scalar::{cosine_similarity, margin_similarity, nce_estimator, nce_estimator_margin};

#[cfg(test)]
mod tests;
