//! Run configuration plus the loss-component ablation and the (λ, τ) sweep.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSpec};
use crate::error::{CpcdError, Result};
use crate::loss::LossArm;
use crate::probe::{evaluate_network, CvReport, ProbeConfig};
use crate::trainer::{train_pretext, LoadedCheckpoint, TrainConfig};

/// Everything a command needs, read from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub ablation: AblationConfig,
    /// Run directory; commands refuse to write without one.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Seeds shared by every arm, so arms are compared pairwise.
    pub seeds: Vec<u64>,
    pub sweep_lambdas: Vec<f64>,
    pub sweep_taus: Vec<f64>,
    /// Seed of every sweep cell.
    pub sweep_seed: u64,
    /// Worker threads for independent runs; 0 lets the pool decide.
    pub workers: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seeds: (0..5).collect(),
            sweep_lambdas: vec![0.1, 0.25, 0.5, 1.0],
            sweep_taus: vec![0.2, 0.4, 0.6],
            sweep_seed: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CpcdError::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        if self.dataset.patch_grid != self.train.patch_grid {
            return Err(CpcdError::config(format!(
                "dataset patch_grid {} differs from train patch_grid {}",
                self.dataset.patch_grid, self.train.patch_grid
            )));
        }
        if self.dataset.channels != self.train.encoder.in_channels {
            return Err(CpcdError::config(format!(
                "dataset has {} channels, encoder expects {}",
                self.dataset.channels, self.train.encoder.in_channels
            )));
        }
        let n = self.dataset.len();
        if self.train.batch_size > n {
            return Err(CpcdError::config(format!("batch_size {} exceeds dataset size {n}", self.train.batch_size)));
        }
        if self.train.loss.n_neg >= n {
            return Err(CpcdError::config(format!("n_neg {} needs more than {n} samples", self.train.loss.n_neg)));
        }
        if self.probe.folds > self.dataset.samples_per_class {
            return Err(CpcdError::config(format!(
                "{} folds need at least that many samples per class, got {}",
                self.probe.folds, self.dataset.samples_per_class
            )));
        }
        let a = &self.ablation;
        if a.seeds.is_empty() {
            return Err(CpcdError::config("ablation needs at least one seed"));
        }
        for &l in &a.sweep_lambdas {
            if !(0.0..=1.0).contains(&l) {
                return Err(CpcdError::config(format!("sweep lambda {l} outside [0, 1]")));
            }
        }
        for &t in &a.sweep_taus {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CpcdError::config(format!("sweep tau {t} must be positive")));
            }
        }
        Ok(())
    }
}

/// One pretraining run followed by a probe of its final network.
#[derive(Clone, Debug, Serialize)]
pub struct ArmResult {
    pub arm: LossArm,
    pub seed: u64,
    pub lambda: f64,
    pub tau: f64,
    pub epochs: usize,
    pub final_loss: f64,
    pub probe: CvReport,
}

pub const RESULT_HEADER: &str = "arm,seed,lambda,tau,epochs,final_loss,top1,top2,f1_macro,qwk";

impl ArmResult {
    fn csv_row(&self) -> String {
        let m = &self.probe.mean;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.arm, self.seed, self.lambda, self.tau, self.epochs, self.final_loss, m.top1, m.top2, m.f1_macro, m.qwk
        )
    }
}

/// Pretrains `arm` with `seed` in `dir`, then probes the final network.
/// The probe uses the same seed, so paired arms also share folds.
pub fn run_arm(dataset: &Dataset, cfg: &RunConfig, arm: LossArm, seed: u64, dir: &Path) -> Result<ArmResult> {
    let mut train = cfg.train.clone();
    train.seed = seed;
    train.loss = train.loss.with_arm(arm);
    fs::create_dir_all(dir)?;
    let out = train_pretext(dataset, train.clone(), dir)?;
    let net = LoadedCheckpoint::load(&out.final_checkpoint)?.network;
    let probe_cfg = ProbeConfig {
        seed,
        ..cfg.probe.clone()
    };
    let (_, probe) = evaluate_network(&net, dataset, &probe_cfg)?;
    fs::write(dir.join("probe.csv"), probe.to_csv())?;
    Ok(ArmResult {
        arm,
        seed,
        lambda: train.loss.lambda,
        tau: train.loss.tau,
        epochs: out.state.epoch,
        final_loss: out.epochs.last().map_or(f64::NAN, |e| e.mean.cpcd),
        probe,
    })
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CpcdError::config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median probe scores of one arm across seeds.
#[derive(Clone, Debug, Serialize)]
pub struct ArmSummary {
    pub arm: LossArm,
    pub median_top1: f64,
    pub median_qwk: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub runs: Vec<ArmResult>,
    pub summary: Vec<ArmSummary>,
}

pub const SUMMARY_HEADER: &str = "arm,median_top1,median_qwk";

impl AblationReport {
    pub fn summary_for(&self, arm: LossArm) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == arm)
    }

    pub fn runs_csv(&self) -> String {
        results_csv(&self.runs)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for a in &self.summary {
            s.push_str(&format!("{},{},{}\n", a.arm, a.median_top1, a.median_qwk));
        }
        s
    }
}

pub fn results_csv(rows: &[ArmResult]) -> String {
    let mut s = format!("{RESULT_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Every arm under every seed; runs are independent and go in parallel.
/// Writes `ablation_runs.csv` and `ablation_summary.csv` into `out`.
pub fn run_ablation(dataset: &Dataset, cfg: &RunConfig, arms: &[LossArm], out: &Path) -> Result<AblationReport> {
    let jobs: Vec<(LossArm, u64)> = arms
        .iter()
        .flat_map(|&a| cfg.ablation.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let runs = in_pool(cfg.ablation.workers, || {
        jobs.par_iter()
            .map(|&(arm, seed)| {
                let dir = out.join("ablation").join(format!("{arm}-seed{seed}"));
                run_arm(dataset, cfg, arm, seed, &dir)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let summary = arms
        .iter()
        .map(|&arm| {
            let of_arm = runs.iter().filter(|r| r.arm == arm);
            ArmSummary {
                arm,
                median_top1: median(of_arm.clone().map(|r| r.probe.mean.top1).collect()),
                median_qwk: median(of_arm.map(|r| r.probe.mean.qwk).collect()),
            }
        })
        .collect();
    let report = AblationReport { runs, summary };
    fs::write(out.join("ablation_runs.csv"), report.runs_csv())?;
    fs::write(out.join("ablation_summary.csv"), report.summary_csv())?;
    Ok(report)
}

/// Full composite loss over the (λ, τ) grid at one seed, one row per cell
/// in λ-major order. Writes `sweep.csv` into `out`.
pub fn run_sweep(dataset: &Dataset, cfg: &RunConfig, out: &Path) -> Result<Vec<ArmResult>> {
    let a = &cfg.ablation;
    let cells: Vec<(f64, f64)> = a
        .sweep_lambdas
        .iter()
        .flat_map(|&l| a.sweep_taus.iter().map(move |&t| (l, t)))
        .collect();
    let rows = in_pool(a.workers, || {
        cells
            .par_iter()
            .map(|&(lambda, tau)| {
                let mut c = cfg.clone();
                c.train.loss.lambda = lambda;
                c.train.loss.tau = tau;
                let dir = out.join("sweep").join(format!("lambda{lambda}-tau{tau}"));
                run_arm(dataset, &c, LossArm::Cpcd, a.sweep_seed, &dir)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    fs::write(out.join("sweep.csv"), results_csv(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests;
