use serde::{Deserialize, Serialize};

use crate::autodiff::{l2_norm, Tensor, MIN_NORM};
use crate::error::{CpcdError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Image,
    Patch,
}

/// A `B × d` block of embeddings detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    data: Tensor,
    normalized: bool,
    level: Level,
}

impl EmbeddingBatch {
    pub fn new(data: Tensor, level: Level) -> Self {
        EmbeddingBatch {
            data,
            normalized: false,
            level,
        }
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }
}

/// Scales each row to unit L2 norm. A row with norm below `1e-12` is an
/// error naming that row.
pub fn normalize_embeddings(batch: &EmbeddingBatch) -> Result<EmbeddingBatch> {
    let mut data = batch.data.clone();
    let d = data.cols();
    for (row, chunk) in data.data_mut().chunks_mut(d).enumerate() {
        let norm = l2_norm(chunk);
        if !(norm >= MIN_NORM) {
            return Err(CpcdError::ZeroRow { row, norm });
        }
        chunk.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(EmbeddingBatch {
        data,
        normalized: true,
        level: batch.level,
    })
}
