//! NaN-aware k-nearest-neighbour imputation.

use std::time::Instant;

use serde_json::json;

use crate::amputation::MissingMask;
use crate::data::DataTable;
use crate::error::Result;
use crate::imputation::{ImputationResult, Params, Working};
use crate::matrix::Matrix;
use crate::stats;

/// Default neighbourhood size: `round(sqrt(n))`, at least 1.
pub fn default_k(n_rows: usize) -> usize {
    ((n_rows as f64).sqrt().round() as usize).max(1)
}

pub struct KnnFill {
    pub filled: Matrix,
    pub k: usize,
    /// Cells that had no comparable neighbour observed in their column.
    pub fallbacks: usize,
}

/// Distance over co-observed standardized features, scaled by
/// `sqrt(d / #co-observed)`; infinite when no feature is shared.
fn partial_distance(a: &[f64], b: &[f64], a_obs: &[bool], b_obs: &[bool]) -> f64 {
    let d = a.len();
    let mut sum = 0.0;
    let mut shared = 0usize;
    for t in 0..d {
        if a_obs[t] && b_obs[t] {
            let diff = a[t] - b[t];
            sum += diff * diff;
            shared += 1;
        }
    }
    if shared == 0 {
        f64::INFINITY
    } else {
        (sum * d as f64 / shared as f64).sqrt()
    }
}

pub fn knn_fill(w: &Working, k: usize) -> KnnFill {
    let (n, d) = (w.n_rows(), w.n_cols());
    let k = k.max(1);
    let scalings = w.scalings();
    let mut z = Matrix::zeros(n, d);
    let mut obs = vec![false; n * d];
    for i in 0..n {
        for j in 0..d {
            if w.is_observed(i, j) {
                z.set(i, j, scalings[j].forward(w.values.get(i, j)));
                obs[i * d + j] = true;
            }
        }
    }
    let mut filled = w.values.clone();
    let mut fallbacks = 0;
    let mut dist = vec![0.0; n];
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let masked: Vec<usize> = (0..d).filter(|&j| !obs[i * d + j]).collect();
        if masked.is_empty() {
            continue;
        }
        let oi = &obs[i * d..(i + 1) * d];
        for r in 0..n {
            dist[r] = if r == i {
                f64::INFINITY
            } else {
                partial_distance(z.row(i), z.row(r), oi, &obs[r * d..(r + 1) * d])
            };
        }
        for &c in &masked {
            candidates.clear();
            candidates.extend(
                (0..n)
                    .filter(|&r| obs[r * d + c] && dist[r].is_finite())
                    .map(|r| (dist[r], r)),
            );
            let value = if candidates.is_empty() {
                fallbacks += 1;
                w.column_center(c)
            } else {
                let take = k.min(candidates.len());
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if take < candidates.len() {
                    candidates.select_nth_unstable_by(take - 1, cmp);
                }
                let nearest = &candidates[..take];
                let vals = nearest.iter().map(|&(_, r)| w.values.get(r, c));
                if w.meta(c).is_discrete() {
                    stats::majority(vals)
                } else {
                    vals.sum::<f64>() / take as f64
                }
            };
            filled.set(i, c, value);
        }
    }
    KnnFill { filled, k, fallbacks }
}

pub fn impute_knn(table: &DataTable, mask: &MissingMask, k: Option<usize>) -> Result<ImputationResult> {
    let started = Instant::now();
    let w = Working::new(table, mask)?;
    w.require_observed()?;
    let k = k.unwrap_or_else(|| default_k(table.n_rows()));
    let out = knn_fill(&w, k);
    let mut params = Params::new();
    params.insert("k".into(), json!(out.k));
    params.insert("knn_fallbacks".into(), json!(out.fallbacks));
    w.finalize(&out.filled, "knn", started, params)
}
