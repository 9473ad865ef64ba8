//! CSV logs. Floats use Rust's shortest round-trip formatting, so equal runs
//! give equal bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::EpochSummary;
use crate::error::Result;
use crate::loss::LossValues;

pub const STEP_HEADER: &str = "step,epoch,nce_image,nce_patch,nce_total,gcld,cpcd,lr,clamp_count";
pub const EPOCH_HEADER: &str =
    "epoch,steps,aborted,nce_image,nce_patch,nce_total,gcld,cpcd,lr,bank_updated,bank_skipped,improved";

pub struct StepLog {
    out: Box<dyn Write>,
}

impl StepLog {
    pub fn create(path: &Path) -> Result<Self> {
        Self::to_writer(Box::new(BufWriter::new(File::create(path)?)))
    }

    pub fn to_writer(mut out: Box<dyn Write>) -> Result<Self> {
        writeln!(out, "{STEP_HEADER}")?;
        Ok(StepLog { out })
    }

    /// A log that discards everything.
    pub fn sink() -> Self {
        StepLog {
            out: Box::new(std::io::sink()),
        }
    }

    pub fn write(&mut self, step: usize, epoch: usize, v: &LossValues, lr: f64, clamps: usize) -> Result<()> {
        writeln!(
            self.out,
            "{step},{epoch},{},{},{},{},{},{lr},{clamps}",
            v.nce_image, v.nce_patch, v.nce_total, v.gcld, v.cpcd
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub struct EpochLog {
    out: BufWriter<File>,
}

impl EpochLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{EPOCH_HEADER}")?;
        Ok(EpochLog { out })
    }

    pub fn write(&mut self, s: &EpochSummary) -> Result<()> {
        let m = &s.mean;
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.epoch,
            s.steps,
            s.aborted,
            m.nce_image,
            m.nce_patch,
            m.nce_total,
            m.gcld,
            m.cpcd,
            s.lr,
            s.bank_updated,
            s.bank_skipped,
            s.improved
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
