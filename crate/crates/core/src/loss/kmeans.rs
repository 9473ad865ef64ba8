//! Spherical k-means on unit rows with cosine similarity.

use rand::Rng;

use crate::autodiff::{dot, l2_norm, Tensor};
use crate::error::{CpcdError, Result};
use crate::rng::{purpose, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    /// `k × d`, unit rows.
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Lloyd iterations run.
    pub iterations: usize,
    /// Whether assignments stopped changing before the iteration cap.
    pub converged: bool,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        self.assignments.iter().for_each(|&a| sizes[a] += 1);
        sizes
    }
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let s = dot(point, c);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// k-means++ seeding with cosine distance `1 - cos` as the distance.
fn seed_centroids<R: Rng>(rows: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids = vec![rows[rng.random_range(0..n)].to_vec()];
    while centroids.len() < k {
        let weights: Vec<f64> = rows
            .iter()
            .map(|r| (1.0 - nearest(r, &centroids).1).max(0.0).powi(2))
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(rows[pick].to_vec());
    }
    centroids
}

/// Gives every empty cluster the point least similar to its own centroid,
/// taken from a cluster that can spare it.
fn repair_empty(rows: &[&[f64]], centroids: &mut [Vec<f64>], assign: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        assign.iter().for_each(|&a| sizes[a] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let mut far = None;
        let mut far_sim = f64::INFINITY;
        for (i, r) in rows.iter().enumerate() {
            if sizes[assign[i]] < 2 {
                continue;
            }
            let s = dot(r, &centroids[assign[i]]);
            if s < far_sim {
                far_sim = s;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        assign[i] = empty;
        centroids[empty] = rows[i].to_vec();
    }
}

/// Clusters unit rows of `embeddings` into `k` groups.
///
/// Each iteration assigns rows to the most similar centroid (ties to the
/// lower index), repairs empty clusters, then replaces each centroid with the
/// normalized mean of its members. Stops when assignments repeat or after
/// `iters` iterations.
pub fn spherical_kmeans(embeddings: &Tensor, k: usize, iters: usize, seed: u64) -> Result<ClusterModel> {
    if embeddings.shape().len() != 2 {
        return Err(CpcdError::input(format!(
            "k-means expects a matrix, got shape {:?}",
            embeddings.shape()
        )));
    }
    let (n, d) = (embeddings.rows(), embeddings.cols());
    if k == 0 || n < k {
        return Err(CpcdError::input(format!("cannot form {k} clusters from {n} rows")));
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| embeddings.row(i)).collect();
    let norms: Vec<f64> = rows.iter().map(|r| l2_norm(r)).collect();
    if norms.iter().any(|v| (v - 1.0).abs() > 1e-6) {
        return Err(CpcdError::NotUnit(norms));
    }
    let mut rng = stream(seed, &[purpose::KMEANS]);
    let mut centroids = seed_centroids(&rows, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < iters.max(1) {
        iterations += 1;
        let mut next: Vec<usize> = rows.iter().map(|r| nearest(r, &centroids).0).collect();
        repair_empty(&rows, &mut centroids, &mut next);
        let unchanged = next == assign;
        assign = next;
        for (j, c) in centroids.iter_mut().enumerate() {
            let mut mean = vec![0.0; d];
            for (r, _) in rows.iter().zip(&assign).filter(|(_, &a)| a == j) {
                mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v);
            }
            let norm = l2_norm(&mean);
            // Members that cancel out leave the previous centroid in place.
            if norm > 1e-12 {
                *c = mean.iter().map(|m| m / norm).collect();
            }
        }
        if unchanged {
            converged = true;
            break;
        }
    }
    let centroids = Tensor::new([k, d], centroids.concat())?;
    Ok(ClusterModel {
        centroids,
        assignments: assign,
        iterations,
        converged,
    })
}

/// Adjusted Rand index between two labelings of the same items. Two
/// single-cluster labelings score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CpcdError::ShapeMismatch {
            op: "adjusted_rand_index",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(a.len() as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
