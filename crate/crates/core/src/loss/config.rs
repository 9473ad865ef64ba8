use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CpcdError, Result};

/// How the `−Σ log(1 − h(m_I′, ·))` term scores each negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeTerm {
    /// Each negative is scored alone against a unit noise term:
    /// `h = σ(margin logit)`.
    #[default]
    PairwiseSigmoid,
    /// The negative takes the positive slot of the margin estimator and the
    /// anchor's other negatives form the noise set.
    Estimator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    /// Angular margin in radians added to negative-pair angles.
    pub margin: f64,
    /// Re-scaling of the margin-adjusted cosine.
    pub scale: f64,
    /// Image-versus-patch weight in both the NCE and the GCLD combinations.
    pub lambda: f64,
    /// GCLD-versus-NCE weight of the composite loss.
    pub lambda_prime: f64,
    pub k_clusters: usize,
    pub n_neg: usize,
    pub kmeans_iters: usize,
    pub negative_term: NegativeTerm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.4,
            margin: 0.5,
            scale: 6.0,
            lambda: 0.5,
            lambda_prime: 0.5,
            k_clusters: 4,
            n_neg: 32,
            kmeans_iters: 20,
            negative_term: NegativeTerm::PairwiseSigmoid,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(CpcdError::config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..FRAC_PI_2).contains(&self.margin) {
            return Err(CpcdError::config(format!("margin must lie in [0, pi/2), got {}", self.margin)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(CpcdError::config(format!("scale must be positive, got {}", self.scale)));
        }
        for (name, v) in [("lambda", self.lambda), ("lambda_prime", self.lambda_prime)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CpcdError::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.k_clusters == 0 {
            return Err(CpcdError::config("k_clusters must be at least 1"));
        }
        if self.n_neg == 0 {
            return Err(CpcdError::config("n_neg must be at least 1"));
        }
        if self.kmeans_iters == 0 {
            return Err(CpcdError::config("kmeans_iters must be at least 1"));
        }
        Ok(())
    }

    /// Applies an ablation arm on top of this configuration.
    pub fn with_arm(&self, arm: LossArm) -> Self {
        let mut c = self.clone();
        match arm {
            LossArm::Nce => {
                c.lambda_prime = 0.0;
                c.margin = 0.0;
                c.scale = 1.0;
            }
            LossArm::NceGcld => {
                c.margin = 0.0;
                c.scale = 1.0;
            }
            LossArm::Cpcd => {}
        }
        c
    }
}

/// The three loss-component ablation arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossArm {
    #[serde(rename = "nce")]
    Nce,
    #[serde(rename = "nce+gcld")]
    NceGcld,
    #[serde(rename = "cpcd")]
    Cpcd,
}

impl LossArm {
    pub const ALL: [LossArm; 3] = [LossArm::Nce, LossArm::NceGcld, LossArm::Cpcd];

    pub fn as_str(self) -> &'static str {
        match self {
            LossArm::Nce => "nce",
            LossArm::NceGcld => "nce+gcld",
            LossArm::Cpcd => "cpcd",
        }
    }
}

impl fmt::Display for LossArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossArm {
    type Err = CpcdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nce" | "nce-only" => Ok(LossArm::Nce),
            "nce+gcld" => Ok(LossArm::NceGcld),
            "cpcd" | "nce+gcld+m" => Ok(LossArm::Cpcd),
            other => Err(CpcdError::config(format!(
                "unknown loss {other:?}; expected nce, nce+gcld or cpcd"
            ))),
        }
    }
}
