//! Pretext training: SGD over the composite loss, memory-bank refreshes,
//! plateau stopping and checkpoints.
//!
//! Every random draw comes from a counter-derived stream keyed by
//! `(seed, purpose, epoch, id)`, so a run is a pure function of its config
//! and a resumed run replays exactly.

mod metrics;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{EpochLog, StepLog, EPOCH_HEADER, STEP_HEADER};

use crate::autodiff::{Graph, Tensor};
use crate::data::{geometric_flip, make_jigsaw, photometric_jitter, Dataset, EpochPlan, Image, JigsawPatchSet};
use crate::error::{CpcdError, Result};
use crate::loss::{cpcd_loss, spherical_kmeans, LossConfig, LossInputs, LossValues};
use crate::memory_bank::{BankUpdate, MemoryBank, BANK_TENSOR_NAME};
use crate::model::{images_tensor, patches_tensor, Checkpoint, EncoderConfig, Network};
use crate::rng::{purpose, stream};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Consecutive aborted steps after which training stops.
pub const MAX_CONSECUTIVE_ABORTS: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrMode {
    /// Constant learning rate.
    #[default]
    Pretext,
    /// Step decay by `lr_decay` every `lr_decay_every` epochs.
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// SGD step size on the batch-summed loss.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a best-loss improvement above `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub lr_mode: LrMode,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Photometric jitter strength for both views.
    pub jitter_strength: f64,
    pub patch_grid: usize,
    /// Side of each jigsaw patch; `None` tiles the whole image.
    pub patch_size: Option<usize>,
    pub bank_update: BankSchedule,
    /// Subtract the batch-mean row from both head outputs before
    /// normalizing. Without it this small encoder drifts into a shared
    /// direction that chases the lagging bank.
    pub center_heads: bool,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
}

/// When fresh image embeddings are written into the memory bank. Either way
/// each row is refreshed once per epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BankSchedule {
    /// All rows at once when the epoch ends, from each id's latest embedding.
    #[default]
    Epoch,
    /// Right after the step that embedded the row's sample.
    Batch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 50,
            min_delta: 1e-4,
            seed: 0,
            lr_mode: LrMode::Pretext,
            lr_decay: 0.9,
            lr_decay_every: 20,
            jitter_strength: 0.4,
            patch_grid: 2,
            patch_size: None,
            bank_update: BankSchedule::Epoch,
            center_heads: true,
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.encoder.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CpcdError::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 * self.loss.k_clusters {
            return Err(CpcdError::config(format!(
                "batch_size {} is below 2·k_clusters = {}",
                self.batch_size,
                2 * self.loss.k_clusters
            )));
        }
        if !(0.0..=1.0).contains(&self.jitter_strength) {
            return Err(CpcdError::config("jitter_strength must lie in [0, 1]"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return Err(CpcdError::config("lr_decay must lie in (0, 1] with a positive period"));
        }
        if self.min_delta < 0.0 {
            return Err(CpcdError::config("min_delta must be non-negative"));
        }
        if self.patch_grid == 0 || self.encoder.patch_count != self.patch_grid * self.patch_grid {
            return Err(CpcdError::config(format!(
                "encoder.patch_count {} must equal patch_grid² for grid {}",
                self.encoder.patch_count, self.patch_grid
            )));
        }
        Ok(())
    }

    /// Patch side for images of side `image_size`, checked against the grid.
    pub fn patch_side(&self, image_size: usize) -> Result<usize> {
        let side = match self.patch_size {
            Some(p) => p,
            None => {
                if image_size % self.patch_grid != 0 {
                    return Err(CpcdError::config(format!(
                        "image size {image_size} is not divisible by patch grid {}",
                        self.patch_grid
                    )));
                }
                image_size / self.patch_grid
            }
        };
        if side == 0 || side * self.patch_grid > image_size {
            return Err(CpcdError::config(format!(
                "{g}×{g} patches of {side} do not fit {image_size}×{image_size} images",
                g = self.patch_grid
            )));
        }
        Ok(side)
    }

    /// Checks the configuration against a dataset before any work starts.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        let [h, w, c] = dataset.image_shape();
        if h != w {
            return Err(CpcdError::config(format!("images must be square, got {h}×{w}")));
        }
        if c != self.encoder.in_channels {
            return Err(CpcdError::config(format!(
                "dataset has {c} channels, encoder expects {}",
                self.encoder.in_channels
            )));
        }
        self.patch_side(h)?;
        if self.batch_size > dataset.len() {
            return Err(CpcdError::config(format!(
                "batch_size {} exceeds dataset size {}",
                self.batch_size,
                dataset.len()
            )));
        }
        if self.loss.n_neg >= dataset.len() {
            return Err(CpcdError::config(format!(
                "n_neg {} needs at least {} samples, dataset has {}",
                self.loss.n_neg,
                self.loss.n_neg + 1,
                dataset.len()
            )));
        }
        Ok(())
    }
}

/// `base` in pretext mode; `base · decay^⌊epoch / every⌋` in fine-tune mode.
pub fn lr_schedule(epoch: usize, base: f64, mode: LrMode, decay: f64, every: usize) -> f64 {
    match mode {
        LrMode::Pretext => base,
        LrMode::Finetune => base * decay.powi((epoch / every.max(1)) as i32),
    }
}

/// `p ← p − lr·∇p` for every tensor holding a gradient, then zeroes the
/// gradients. A non-finite gradient anywhere aborts the whole step with the
/// parameters untouched.
pub fn sgd_step(params: &mut [Tensor], lr: f64) -> Result<()> {
    let bad = params
        .iter()
        .position(|t| t.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())));
    if let Some(i) = bad {
        params.iter_mut().for_each(Tensor::zero_grad);
        return Err(CpcdError::NonFinite(format!("gradient of parameter {i}")));
    }
    for t in params.iter_mut() {
        if let Some(g) = t.grad().map(<[f64]>::to_vec) {
            t.data_mut().iter_mut().zip(&g).for_each(|(p, g)| *p -= lr * g);
            t.zero_grad();
        }
    }
    Ok(())
}

/// Progress counters, saved in every checkpoint so a run can resume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps, aborted ones included.
    pub step: usize,
    pub best_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    pub consecutive_aborts: usize,
    pub aborted_steps: usize,
    pub bank_updates: usize,
    pub stopped_early: bool,
    /// Ids whose bank row still holds its random initial value. Epochs that
    /// start before this empties do not count towards the plateau rule:
    /// negatives drawn from random rows give a loss no later epoch can match.
    #[serde(default)]
    pub initial_rows: Vec<usize>,
}

/// Identifies the dataset a checkpoint was trained on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub len: usize,
    pub image_shape: [usize; 3],
    pub pixel_hash: String,
}

impl DatasetFingerprint {
    pub fn of(dataset: &Dataset) -> Self {
        DatasetFingerprint {
            len: dataset.len(),
            image_shape: dataset.image_shape(),
            pixel_hash: dataset.pixel_hash(),
        }
    }
}

/// The JSON echoed into each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub train: TrainConfig,
    pub state: TrainState,
    pub dataset: DatasetFingerprint,
}

/// A checkpoint split back into its parts.
pub struct LoadedCheckpoint {
    pub meta: CheckpointMeta,
    pub network: Network,
    pub bank: MemoryBank,
}

impl LoadedCheckpoint {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&ckpt.config)?;
        let network = Network::from_named(meta.train.encoder.clone(), &ckpt.tensors)?;
        let rows = ckpt
            .tensor(BANK_TENSOR_NAME)
            .ok_or_else(|| CpcdError::input("checkpoint has no memory bank"))?;
        let bank = MemoryBank::from_tensor(rows.clone())?;
        Ok(LoadedCheckpoint { meta, network, bank })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbortEvent {
    pub step: usize,
    pub epoch: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub aborted: usize,
    /// Mean of each loss term over the epoch's completed steps.
    pub mean: LossValues,
    pub lr: f64,
    pub bank_updated: usize,
    pub bank_skipped: usize,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub epochs: Vec<EpochSummary>,
    pub aborts: Vec<AbortEvent>,
    pub best_checkpoint: Option<PathBuf>,
    pub final_checkpoint: PathBuf,
}

/// Both views of one sample plus its negative ids.
struct Views {
    image: Image,
    jigsaw: JigsawPatchSet,
    negatives: Vec<usize>,
}

enum StepResult {
    Done(LossValues, usize),
    Aborted(String),
}

pub struct Trainer<'d> {
    dataset: &'d Dataset,
    config: TrainConfig,
    network: Network,
    bank: MemoryBank,
    state: TrainState,
    fingerprint: DatasetFingerprint,
    patch_side: usize,
    /// Latest normalized image embedding per id during the current epoch.
    fresh: BTreeMap<usize, Vec<f64>>,
    /// Bank writes so far this epoch.
    pending: BankUpdate,
    aborts: Vec<AbortEvent>,
}

impl<'d> Trainer<'d> {
    /// Fresh network and bank, both seeded from `config.seed`.
    pub fn new(dataset: &'d Dataset, config: TrainConfig) -> Result<Self> {
        config.check_dataset(dataset)?;
        let network = Network::new(config.encoder.clone(), config.seed)?;
        let bank = MemoryBank::init(dataset.len(), config.encoder.head_dim, config.seed)?;
        let state = TrainState {
            initial_rows: (0..dataset.len()).collect(),
            ..TrainState::default()
        };
        Self::assemble(dataset, config, network, bank, state)
    }

    /// Continues from a checkpoint. `max_epochs` and `patience` may be
    /// raised; everything else must match the original run.
    pub fn resume(
        dataset: &'d Dataset,
        ckpt: LoadedCheckpoint,
        max_epochs: Option<usize>,
        patience: Option<usize>,
    ) -> Result<Self> {
        let mut config = ckpt.meta.train;
        if let Some(m) = max_epochs {
            config.max_epochs = m;
        }
        if let Some(p) = patience {
            config.patience = p;
        }
        config.check_dataset(dataset)?;
        let fp = DatasetFingerprint::of(dataset);
        if fp != ckpt.meta.dataset {
            return Err(CpcdError::input(format!(
                "checkpoint was trained on dataset {} ({} samples), got {} ({} samples)",
                ckpt.meta.dataset.pixel_hash, ckpt.meta.dataset.len, fp.pixel_hash, fp.len
            )));
        }
        let mut state = ckpt.meta.state;
        state.stopped_early = false;
        Self::assemble(dataset, config, ckpt.network, ckpt.bank, state)
    }

    fn assemble(
        dataset: &'d Dataset,
        config: TrainConfig,
        network: Network,
        bank: MemoryBank,
        state: TrainState,
    ) -> Result<Self> {
        if bank.len() != dataset.len() || bank.dim() != config.encoder.head_dim {
            return Err(CpcdError::input(format!(
                "memory bank is {}×{}, expected {}×{}",
                bank.len(),
                bank.dim(),
                dataset.len(),
                config.encoder.head_dim
            )));
        }
        let patch_side = config.patch_side(dataset.image_shape()[0])?;
        Ok(Trainer {
            dataset,
            fingerprint: DatasetFingerprint::of(dataset),
            config,
            network,
            bank,
            state,
            patch_side,
            fresh: BTreeMap::new(),
            pending: BankUpdate::default(),
            aborts: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = CheckpointMeta {
            train: self.config.clone(),
            state: self.state.clone(),
            dataset: self.fingerprint.clone(),
        };
        let mut tensors = self.network.named_tensors();
        tensors.push((BANK_TENSOR_NAME.to_string(), self.bank.rows().clone()));
        Ok(Checkpoint {
            config: serde_json::to_string(&meta)?,
            tensors,
        })
    }

    fn make_views(&self, epoch: usize, id: usize) -> Result<Views> {
        let seed = self.config.seed;
        let sample = self.dataset.get(id)?;
        let mut rng = stream(seed, &[purpose::VIEWS, epoch as u64, id as u64]);
        let (h, v) = (rng.random::<bool>(), rng.random::<bool>());
        let flipped = geometric_flip(&sample.image, h, v);
        let (image, _) = photometric_jitter(&flipped, self.config.jitter_strength, &mut rng);
        let jigsaw = make_jigsaw(
            &sample.image,
            id,
            self.config.patch_grid,
            self.patch_side,
            self.config.jitter_strength,
            &mut rng,
        )?;
        let mut neg_rng = stream(seed, &[purpose::NEGATIVES, epoch as u64, id as u64]);
        let negatives = self.bank.sample_negative_ids(id, self.config.loss.n_neg, &mut neg_rng)?;
        Ok(Views {
            image,
            jigsaw,
            negatives,
        })
    }

    /// One SGD step on the batch `ids`. Non-finite losses or gradients abort
    /// the step and leave the parameters alone.
    fn step(&mut self, epoch: usize, ids: &[usize], lr: f64) -> Result<StepResult> {
        let views = ids
            .par_iter()
            .map(|&id| self.make_views(epoch, id))
            .collect::<Result<Vec<_>>>()?;
        let cfg = &self.config.loss;
        let b = ids.len();
        let d = self.config.encoder.head_dim;

        let mut g = Graph::new();
        let p = self.network.bind(&mut g)?;
        let imgs: Vec<&Image> = views.iter().map(|v| &v.image).collect();
        let x = g.constant(images_tensor(&imgs)?)?;
        let feats = self.network.encode(&mut g, &p, x)?;
        let f = self.network.project_image(&mut g, &p, feats)?;
        let sets: Vec<&JigsawPatchSet> = views.iter().map(|v| &v.jigsaw).collect();
        let xp = g.constant(patches_tensor(&sets)?)?;
        let pf = self.network.encode_patches(&mut g, &p, xp)?;
        let gp = self.network.project_patches(&mut g, &p, pf)?;
        let (f, gp) = if self.config.center_heads {
            (g.center_rows(f)?, g.center_rows(gp)?)
        } else {
            (f, gp)
        };
        if !g.value(f).is_finite() || !g.value(gp).is_finite() {
            return Ok(StepResult::Aborted("non-finite embedding".into()));
        }
        let f_bar = match g.l2_normalize(f) {
            Ok(v) => v,
            Err(e) => return Ok(StepResult::Aborted(e.to_string())),
        };
        let g_bar = match g.l2_normalize(gp) {
            Ok(v) => v,
            Err(e) => return Ok(StepResult::Aborted(e.to_string())),
        };

        let step = self.state.step as u64;
        let kseed = |level: u64| stream(self.config.seed, &[purpose::KMEANS, step, level]).random::<u64>();
        let image_clusters = spherical_kmeans(g.value(f_bar), cfg.k_clusters, cfg.kmeans_iters, kseed(0))?;
        let patch_clusters = spherical_kmeans(g.value(g_bar), cfg.k_clusters, cfg.kmeans_iters, kseed(1))?;

        let positives = g.constant(self.bank.gather(ids)?)?;
        let neg_ids: Vec<usize> = views.iter().flat_map(|v| v.negatives.iter().copied()).collect();
        let negatives = g.constant(self.bank.gather(&neg_ids)?.reshape([b, cfg.n_neg, d])?)?;
        let inputs = LossInputs {
            f_bar,
            g_bar,
            positives,
            negatives,
            image_clusters: &image_clusters,
            patch_clusters: &patch_clusters,
        };
        let breakdown = cpcd_loss(&mut g, &inputs, cfg)?;
        let values = breakdown.values(&g);
        if !values.cpcd.is_finite() {
            return Ok(StepResult::Aborted(format!("non-finite loss {}", values.cpcd)));
        }
        g.backward(breakdown.cpcd)?;
        let params = self.network.params_mut();
        for (t, v) in params.iter_mut().zip(&p) {
            if let Some(grad) = g.grad(*v) {
                t.accumulate_grad(grad)?;
            }
        }
        if let Err(e) = sgd_step(params, lr) {
            return Ok(StepResult::Aborted(e.to_string()));
        }
        let fb = g.value(f_bar);
        for (i, &id) in ids.iter().enumerate() {
            self.fresh.insert(id, fb.row(i).to_vec());
        }
        if self.config.bank_update == BankSchedule::Batch {
            self.flush_fresh()?;
        }
        Ok(StepResult::Done(values, breakdown.diagnostics.acos_clamps))
    }

    /// Writes the collected fresh rows into the bank.
    fn flush_fresh(&mut self) -> Result<()> {
        let fresh = std::mem::take(&mut self.fresh);
        let u = self.bank.update_epoch(fresh.iter().map(|(&id, r)| (id, r.as_slice())))?;
        if !self.state.initial_rows.is_empty() {
            self.state
                .initial_rows
                .retain(|id| !fresh.contains_key(id) || u.skipped.contains(id));
        }
        self.pending.updated += u.updated;
        self.pending.skipped.extend(u.skipped);
        Ok(())
    }

    /// Runs one epoch, logging each step and updating the bank on the
    /// configured schedule.
    pub fn run_epoch(&mut self, log: &mut StepLog) -> Result<EpochSummary> {
        let epoch = self.state.epoch;
        let c = &self.config;
        let lr = lr_schedule(epoch, c.learning_rate, c.lr_mode, c.lr_decay, c.lr_decay_every);
        let plan = EpochPlan::new(self.dataset.len(), c.batch_size, c.seed, epoch)?;
        let warm = self.state.initial_rows.is_empty();
        let mut sum = LossValues::default();
        let mut done = 0usize;
        let mut aborted = 0usize;
        for ids in plan.batches() {
            let result = self.step(epoch, ids, lr)?;
            self.state.step += 1;
            match result {
                StepResult::Done(v, clamps) => {
                    self.state.consecutive_aborts = 0;
                    log.write(self.state.step, epoch, &v, lr, clamps)?;
                    accumulate(&mut sum, &v);
                    done += 1;
                }
                StepResult::Aborted(reason) => {
                    self.state.consecutive_aborts += 1;
                    self.state.aborted_steps += 1;
                    aborted += 1;
                    self.aborts.push(AbortEvent {
                        step: self.state.step,
                        epoch,
                        reason: reason.clone(),
                    });
                    if self.state.consecutive_aborts >= MAX_CONSECUTIVE_ABORTS {
                        return Err(CpcdError::TrainingHalted(format!(
                            "{MAX_CONSECUTIVE_ABORTS} consecutive aborted steps, last at step {}: {reason}",
                            self.state.step
                        )));
                    }
                }
            }
        }
        self.flush_fresh()?;
        let update = std::mem::take(&mut self.pending);
        self.state.bank_updates += 1;
        self.state.epoch += 1;

        let mean = scaled(&sum, 1.0 / done.max(1) as f64);
        let tracked = warm && done > 0;
        let improved = tracked && self.state.best_loss.is_none_or(|b| mean.cpcd < b);
        if tracked && self.state.best_loss.is_none_or(|b| mean.cpcd < b - self.config.min_delta) {
            self.state.epochs_since_improvement = 0;
        } else if warm {
            self.state.epochs_since_improvement += 1;
        }
        if improved {
            self.state.best_loss = Some(mean.cpcd);
            self.state.best_epoch = Some(epoch);
        }
        Ok(EpochSummary {
            epoch,
            steps: done,
            aborted,
            mean,
            lr,
            bank_updated: update.updated,
            bank_skipped: update.skipped.len(),
            improved,
        })
    }

    /// Trains until `max_epochs` or the plateau rule, writing the step and
    /// epoch logs plus `best.ckpt` and `final.ckpt` into `out_dir`.
    pub fn run(&mut self, out_dir: &Path) -> Result<TrainOutcome> {
        fs::create_dir_all(out_dir)?;
        let mut steps = StepLog::create(&out_dir.join(METRICS_FILE))?;
        let mut epochs = EpochLog::create(&out_dir.join(EPOCHS_FILE))?;
        let best_path = out_dir.join(BEST_CHECKPOINT);
        let mut summaries = Vec::new();
        let mut best = None;
        while self.state.epoch < self.config.max_epochs {
            let summary = self.run_epoch(&mut steps)?;
            epochs.write(&summary)?;
            if summary.improved {
                self.checkpoint()?.save(&best_path)?;
                best = Some(best_path.clone());
            }
            summaries.push(summary);
            if self.state.epochs_since_improvement >= self.config.patience {
                self.state.stopped_early = true;
                break;
            }
        }
        steps.flush()?;
        epochs.flush()?;
        let final_path = out_dir.join(FINAL_CHECKPOINT);
        self.checkpoint()?.save(&final_path)?;
        if best.is_none() && best_path.exists() {
            best = Some(best_path);
        }
        Ok(TrainOutcome {
            state: self.state.clone(),
            epochs: summaries,
            aborts: std::mem::take(&mut self.aborts),
            best_checkpoint: best,
            final_checkpoint: final_path,
        })
    }
}

fn accumulate(sum: &mut LossValues, v: &LossValues) {
    sum.nce_image += v.nce_image;
    sum.nce_patch += v.nce_patch;
    sum.nce_total += v.nce_total;
    sum.gcld_image_term += v.gcld_image_term;
    sum.gcld_patch_term += v.gcld_patch_term;
    sum.gcld += v.gcld;
    sum.cpcd += v.cpcd;
}

fn scaled(v: &LossValues, s: f64) -> LossValues {
    LossValues {
        nce_image: v.nce_image * s,
        nce_patch: v.nce_patch * s,
        nce_total: v.nce_total * s,
        gcld_image_term: v.gcld_image_term * s,
        gcld_patch_term: v.gcld_patch_term * s,
        gcld: v.gcld * s,
        cpcd: v.cpcd * s,
    }
}

/// Trains from scratch; see [`Trainer::run`].
pub fn train_pretext(dataset: &Dataset, config: TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    Trainer::new(dataset, config)?.run(out_dir)
}

#[cfg(test)]
mod tests;
