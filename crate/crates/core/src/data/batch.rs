use rand::seq::SliceRandom;

use crate::error::{CpcdError, Result};
use crate::rng::{purpose, stream};

/// Id order for one epoch: a seeded shuffle of `0..n` cut into full batches.
/// The trailing partial batch is dropped.
#[derive(Clone, Debug)]
pub struct EpochPlan {
    order: Vec<usize>,
    batch_size: usize,
}

impl EpochPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Self> {
        if n == 0 {
            return Err(CpcdError::input("cannot iterate an empty dataset"));
        }
        if batch_size == 0 || batch_size > n {
            return Err(CpcdError::config(format!(
                "batch size {batch_size} must be in 1..={n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(seed, &[purpose::SHUFFLE, epoch as u64]));
        Ok(EpochPlan { order, batch_size })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len() / self.batch_size
    }

    /// The full shuffled order, including ids of the dropped tail.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn batches(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.order.chunks_exact(self.batch_size)
    }
}
