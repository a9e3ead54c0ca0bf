//! Lloyd k-means with k-means++ seeding over unit-normalized rows.
//!
//! Rows are normalized up front so distances follow cosine geometry,
//! but center updates stay plain Euclidean means, which keeps the
//! classic monotone-objective guarantee.

use crate::error::{Error, Result};
use crate::tensor::{l2_normalize, EmbeddingMatrix};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const MOVE_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 100;

/// Full clustering result including the per-iteration objective, which
/// tests assert is non-increasing.
#[derive(Debug, Clone)]
pub struct KmeansTrace {
    pub centers: EmbeddingMatrix,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centers, one entry per
    /// assignment pass.
    pub objective: Vec<f64>,
}

/// Clusters the rows of `m` into `k` groups. Deterministic for a fixed
/// seed. Assignment ties go to the lowest center index; a cluster that
/// loses all members keeps its previous center.
pub fn kmeans(m: &EmbeddingMatrix, k: usize, seed: u64) -> Result<(EmbeddingMatrix, Vec<usize>)> {
    let t = kmeans_with_trace(m, k, seed)?;
    Ok((t.centers, t.assignments))
}

pub fn kmeans_with_trace(m: &EmbeddingMatrix, k: usize, seed: u64) -> Result<KmeansTrace> {
    let rows = m.rows();
    if k < 1 || k > rows {
        return Err(Error::InvalidK { k, rows });
    }
    let x = l2_normalize(m)?;
    let d = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(&x, k, &mut rng);
    let mut assignments = vec![0usize; rows];
    let mut objective = Vec::new();

    for _ in 0..MAX_ITERS {
        let obj = assign(&x, &centers, &mut assignments);
        objective.push(obj);

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            let row = x.row_slice(i);
            for (j, v) in row.iter().enumerate() {
                sums[(c, j)] += v;
            }
        }
        let mut max_move: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut dist2 = 0.0;
            for j in 0..d {
                let new = sums[(c, j)] * inv;
                let delta = new - centers[(c, j)];
                dist2 += delta * delta;
                centers[(c, j)] = new;
            }
            max_move = max_move.max(dist2.sqrt());
        }
        if max_move < MOVE_TOL {
            break;
        }
    }

    let obj = assign(&x, &centers, &mut assignments);
    objective.push(obj);
    Ok(KmeansTrace {
        centers: EmbeddingMatrix::new(centers)?,
        assignments,
        objective,
    })
}

/// Writes the nearest-center index per row, returning the summed
/// squared distance.
fn assign(x: &EmbeddingMatrix, centers: &Array2<f64>, out: &mut [usize]) -> f64 {
    let k = centers.nrows();
    let d = x.dim();
    let mut total = 0.0;
    for (i, slot) in out.iter_mut().enumerate() {
        let row = x.row_slice(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let mut acc = 0.0;
            for j in 0..d {
                let delta = row[j] - centers[(c, j)];
                acc += delta * delta;
            }
            if acc < best_d {
                best_d = acc;
                best = c;
            }
        }
        *slot = best;
        total += best_d;
    }
    total
}

/// k-means++ seeding: first center uniform, the rest sampled with
/// probability proportional to squared distance from the chosen set.
/// When every remaining weight is zero (duplicate-heavy data) the first
/// unchosen row is taken so k distinct rows are always produced.
fn seed_plus_plus(x: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let rows = x.rows();
    let d = x.dim();
    let mut centers = Array2::<f64>::zeros((k, d));
    let mut chosen = vec![false; rows];

    let first = rng.random_range(0..rows);
    chosen[first] = true;
    centers.row_mut(0).assign(&x.data().row(first));

    let mut d2 = vec![0.0f64; rows];
    for (i, slot) in d2.iter_mut().enumerate() {
        *slot = sq_dist(x.row_slice(i), x.row_slice(first));
    }

    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                cum += w;
                if cum > r {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| {
                d2.iter().rposition(|&w| w > 0.0).expect("positive total")
            })
        } else {
            chosen.iter().position(|&c| !c).expect("k <= rows")
        };
        chosen[pick] = true;
        centers.row_mut(c).assign(&x.data().row(pick));
        for (i, slot) in d2.iter_mut().enumerate() {
            let dist = sq_dist(x.row_slice(i), x.row_slice(pick));
            if dist < *slot {
                *slot = dist;
            }
        }
    }
    centers
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        let delta = a[k] - b[k];
        acc += delta * delta;
    }
    acc
}
