//! Per-sample moving-average embeddings that supply positives and negatives.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{l2_norm, Tensor};
use crate::error::{CpcdError, Result};
use crate::rng::{purpose, stream};

pub const EMA_COEFFICIENT: f64 = 0.5;
pub const BANK_TENSOR_NAME: &str = "memory_bank";

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    rows: Tensor,
    ema: f64,
}

/// Outcome of one [`MemoryBank::update_epoch`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BankUpdate {
    pub updated: usize,
    /// Ids whose fresh row was non-finite or degenerate and so left as is.
    pub skipped: Vec<usize>,
}

impl MemoryBank {
    /// Rows drawn uniformly on the unit sphere (normalized Gaussians).
    pub fn init(size: usize, dim: usize, seed: u64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(CpcdError::config("memory bank needs at least one row and column"));
        }
        let mut rng = stream(seed, &[purpose::BANK]);
        let mut data = Vec::with_capacity(size * dim);
        for _ in 0..size {
            loop {
                let row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = l2_norm(&row);
                if n > 1e-6 {
                    data.extend(row.iter().map(|v| v / n));
                    break;
                }
            }
        }
        Ok(MemoryBank {
            rows: Tensor::new([size, dim], data)?,
            ema: EMA_COEFFICIENT,
        })
    }

    /// Restores a bank from checkpointed rows, which must already be unit norm.
    pub fn from_tensor(rows: Tensor) -> Result<Self> {
        if rows.shape().len() != 2 {
            return Err(CpcdError::input(format!("bank tensor has shape {:?}", rows.shape())));
        }
        for i in 0..rows.rows() {
            let n = l2_norm(rows.row(i));
            if (n - 1.0).abs() > 1e-9 {
                return Err(CpcdError::NotUnit(vec![n]));
            }
        }
        Ok(MemoryBank {
            rows: rows.with_requires_grad(false),
            ema: EMA_COEFFICIENT,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.len() {
            return Err(CpcdError::OutOfRange {
                index: id,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// The stored row for `id`. Returned by value so it can only enter a
    /// graph as a constant.
    pub fn lookup_positive(&self, id: usize) -> Result<Vec<f64>> {
        self.check(id)?;
        Ok(self.rows.row(id).to_vec())
    }

    /// `n_neg` distinct ids drawn uniformly from every id except `id`.
    pub fn sample_negative_ids<R: Rng + ?Sized>(&self, id: usize, n_neg: usize, rng: &mut R) -> Result<Vec<usize>> {
        self.check(id)?;
        let n = self.len();
        if n_neg > n - 1 {
            return Err(CpcdError::config(format!(
                "{n_neg} negatives requested but only {} other samples exist",
                n - 1
            )));
        }
        // Sample from 0..n-1 and shift past the excluded id.
        Ok(index::sample(rng, n - 1, n_neg)
            .into_iter()
            .map(|j| if j >= id { j + 1 } else { j })
            .collect())
    }

    /// Rows for [`MemoryBank::sample_negative_ids`], as an `n_neg × d` matrix.
    pub fn sample_negatives<R: Rng + ?Sized>(&self, id: usize, n_neg: usize, rng: &mut R) -> Result<Tensor> {
        let ids = self.sample_negative_ids(id, n_neg, rng)?;
        self.gather(&ids)
    }

    pub fn gather(&self, ids: &[usize]) -> Result<Tensor> {
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            self.check(i)?;
            data.extend_from_slice(self.rows.row(i));
        }
        Tensor::new([ids.len(), d], data)
    }

    /// `m <- normalize(0.5 m + 0.5 fresh)` for each `(id, fresh)` pair.
    pub fn update_epoch<'a, I>(&mut self, fresh: I) -> Result<BankUpdate>
    where
        I: IntoIterator<Item = (usize, &'a [f64])>,
    {
        let d = self.dim();
        let mut report = BankUpdate::default();
        for (id, row) in fresh {
            self.check(id)?;
            if row.len() != d {
                return Err(CpcdError::ShapeMismatch {
                    op: "bank update",
                    lhs: vec![d],
                    rhs: vec![row.len()],
                });
            }
            let ema = self.ema;
            let mixed: Vec<f64> = self
                .rows
                .row(id)
                .iter()
                .zip(row)
                .map(|(m, f)| ema * m + (1.0 - ema) * f)
                .collect();
            let n = l2_norm(&mixed);
            if !row.iter().all(|v| v.is_finite()) || !(n > 1e-12) {
                report.skipped.push(id);
                continue;
            }
            self.rows
                .row_mut(id)
                .iter_mut()
                .zip(&mixed)
                .for_each(|(m, v)| *m = v / n);
            report.updated += 1;
        }
        Ok(report)
    }
}
