use std::fs;
use std::path::{Path, PathBuf};

use cpcd_core::autodiff::GradFault;
use cpcd_core::data::{generate_synthetic_dataset, read_dataset, write_dataset, Dataset};
use cpcd_core::experiment::{run_ablation, run_sweep, RunConfig};
use cpcd_core::loss::LossArm;
use cpcd_core::probe::{evaluate_network, ConfusionMatrix};
use cpcd_core::trainer::{train_pretext, LoadedCheckpoint, DatasetFingerprint};
use cpcd_core::verify::{run_suite, VerifyOptions};
use serde_json::json;

use crate::provenance::RunRecord;
use crate::{CliError, Common};

/// The run directory, created if needed. A non-empty one is refused unless
/// `force` is set.
fn prepare_out(out: Option<&Path>, force: bool) -> Result<PathBuf, CliError> {
    let dir = out
        .ok_or_else(|| CliError::Validation("no run directory: pass --out or set `output` in the config".into()))?
        .to_path_buf();
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Validation(format!("{} exists and is not a directory", dir.display())));
        }
        if !force && fs::read_dir(&dir)?.next().is_some() {
            return Err(CliError::Validation(format!(
                "{} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_dataset(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset, CliError> {
    Ok(match data {
        Some(d) => read_dataset(d)?,
        None => generate_synthetic_dataset(&cfg.dataset)?,
    })
}

/// Runs `body` between the start and end of a run record, so failures are
/// recorded too.
fn recorded(
    command: &str,
    dir: &Path,
    cfg: Option<&RunConfig>,
    body: impl FnOnce() -> Result<serde_json::Value, CliError>,
) -> Result<(), CliError> {
    let record = RunRecord::start(command, dir, cfg.map(RunConfig::to_toml).as_deref())?;
    match body() {
        Ok(summary) => record.finish(summary),
        Err(e) => Err(record.fail(e)),
    }
}

pub fn synth(c: &Common) -> Result<(), CliError> {
    let (mut cfg, _) = c.resolve()?;
    if let Some(s) = c.seed {
        cfg.dataset.seed = s;
    }
    cfg.dataset.validate()?;
    let dir = prepare_out(cfg.output.as_deref(), c.force)?;
    recorded("synth", &dir, Some(&cfg), || {
        let ds = generate_synthetic_dataset(&cfg.dataset)?;
        let paths = write_dataset(&ds, &dir)?;
        let hash = ds.pixel_hash();
        println!("wrote {} samples to {} (pixel hash {hash})", paths.len(), dir.display());
        Ok(json!({ "samples": paths.len(), "pixel_hash": hash }))
    })
}

pub fn pretrain(c: &Common, data: Option<&Path>) -> Result<(), CliError> {
    let (mut cfg, _) = c.resolve()?;
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg, data)?;
    cfg.train.check_dataset(&ds)?;
    let dir = prepare_out(cfg.output.as_deref(), c.force)?;
    recorded("pretrain", &dir, Some(&cfg), || {
        let out = train_pretext(&ds, cfg.train.clone(), &dir)?;
        for e in &out.epochs {
            if e.epoch % 10 == 0 || e.epoch + 1 == out.state.epoch {
                println!(
                    "epoch {:>4}  cpcd {:>12.6}  nce {:>12.6}  gcld {:>10.6}  aborted {}",
                    e.epoch, e.mean.cpcd, e.mean.nce_total, e.mean.gcld, e.aborted
                );
            }
        }
        let s = &out.state;
        println!(
            "trained {} epochs ({} steps, {} aborted{}); final checkpoint {}",
            s.epoch,
            s.step,
            s.aborted_steps,
            if s.stopped_early { ", stopped on plateau" } else { "" },
            out.final_checkpoint.display()
        );
        Ok(json!({
            "epochs": s.epoch,
            "steps": s.step,
            "aborted_steps": s.aborted_steps,
            "best_loss": s.best_loss,
            "best_epoch": s.best_epoch,
            "stopped_early": s.stopped_early,
            "final_loss": out.epochs.last().map(|e| e.mean.cpcd),
            "dataset_pixel_hash": ds.pixel_hash(),
        }))
    })
}

pub fn probe(c: &Common, checkpoint: &Path, data: Option<&Path>) -> Result<(), CliError> {
    let (mut cfg, _) = c.resolve()?;
    if let Some(s) = c.seed {
        cfg.probe.seed = s;
    }
    cfg.probe.validate()?;
    let ckpt = LoadedCheckpoint::load(checkpoint)?;
    let ds = load_dataset(&cfg, data)?;
    let dir = prepare_out(cfg.output.as_deref(), c.force)?;
    recorded("probe", &dir, Some(&cfg), || {
        let same_data = DatasetFingerprint::of(&ds) == ckpt.meta.dataset;
        if !same_data {
            println!("note: probing on a dataset other than the one the checkpoint was trained on");
        }
        let (_, report) = evaluate_network(&ckpt.network, &ds, &cfg.probe)?;
        let mut pooled = ConfusionMatrix::zeros(ds.n_classes());
        for f in &report.folds {
            pooled.add(&f.metrics.confusion)?;
        }
        fs::write(dir.join("probe.csv"), report.to_csv())?;
        fs::write(dir.join("confusion.csv"), pooled.to_csv())?;
        let metrics = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(dir.join("metrics.json"), metrics + "\n")?;
        print!("{}", report.to_table());
        Ok(json!({
            "checkpoint": checkpoint.display().to_string(),
            "same_dataset_as_training": same_data,
            "mean": report.mean,
        }))
    })
}

pub fn verify(out: Option<&Path>, force: bool, inject: bool) -> Result<(), CliError> {
    let opts = VerifyOptions {
        fault: inject.then_some(GradFault::FlipAcosSign),
    };
    let dir = match out {
        Some(o) => Some(prepare_out(Some(o), force)?),
        None => None,
    };
    let check = || {
        let report = run_suite(&opts)?;
        println!("{report}");
        if let Some(d) = &dir {
            fs::write(d.join("verify.txt"), report.to_string())?;
        }
        let failed = report.failures().count();
        if failed > 0 {
            return Err(CliError::Verification(format!("{failed} of {} checks failed", report.checks.len())));
        }
        Ok(json!({ "checks": report.checks.len(), "failed": 0 }))
    };
    match &dir {
        Some(d) => recorded("verify", d, None, check),
        None => check().map(|_| ()),
    }
}

pub fn ablate(c: &Common, data: Option<&Path>, arms: bool, sweep: bool) -> Result<(), CliError> {
    if c.loss.is_some() {
        return Err(CliError::Validation("ablate runs every loss arm; drop --loss".into()));
    }
    let (mut cfg, _) = c.resolve()?;
    if let Some(s) = c.seed {
        let n = cfg.ablation.seeds.len() as u64;
        cfg.ablation.seeds = (s..s + n).collect();
        cfg.ablation.sweep_seed = s;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg, data)?;
    cfg.train.check_dataset(&ds)?;
    let dir = prepare_out(cfg.output.as_deref(), c.force)?;
    recorded("ablate", &dir, Some(&cfg), || {
        let mut summary = json!({});
        if arms {
            let report = run_ablation(&ds, &cfg, &LossArm::ALL, &dir)?;
            println!("loss arms over seeds {:?}:", cfg.ablation.seeds);
            print!("{}", report.summary_csv());
            summary["arms"] = serde_json::to_value(&report.summary).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        if sweep {
            let rows = run_sweep(&ds, &cfg, &dir)?;
            println!("(lambda, tau) sweep, {} cells:", rows.len());
            for r in &rows {
                println!("lambda {:<5} tau {:<4} top1 {:.4} qwk {:.4}", r.lambda, r.tau, r.probe.mean.top1, r.probe.mean.qwk);
            }
            summary["sweep_cells"] = json!(rows.len());
        }
        Ok(summary)
    })
}
