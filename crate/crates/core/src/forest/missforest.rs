use std::time::Instant;

use serde_json::json;

use super::{fit_forest, predict_forest, ForestConfig, Task};
use crate::amputation::MissingMask;
use crate::data::DataTable;
use crate::error::Result;
use crate::imputation::{ImputationResult, Params, Working};
use crate::matrix::Matrix;
use crate::seed::SeedBuilder;

/// Incomplete columns in ascending order of missingness (ties by index).
fn visit_order(w: &Working) -> Vec<usize> {
    let mut cols: Vec<usize> = (0..w.n_cols()).filter(|&j| w.missing_count(j) > 0).collect();
    cols.sort_by_key(|&j| (w.missing_count(j), j));
    cols
}

fn features_without(m: &Matrix, rows: &[usize], skip: usize) -> Matrix {
    let d = m.cols();
    let mut out = Matrix::zeros(rows.len(), d - 1);
    for (r, &i) in rows.iter().enumerate() {
        let src = m.row(i);
        let dst = out.row_mut(r);
        dst[..skip].copy_from_slice(&src[..skip]);
        dst[skip..].copy_from_slice(&src[skip + 1..]);
    }
    out
}

/// One MissForest sweep: every incomplete column (ascending missingness) is
/// regressed or classified on the current fill of the others, fitted on its
/// observed rows, and its masked cells are re-predicted in place.
pub fn missforest_pass(w: &Working, current: &mut Matrix, config: &ForestConfig, seed: u64, iteration: usize) -> Result<()> {
    for j in visit_order(w) {
        let obs_rows = w.observed_rows(j);
        let miss_rows = w.missing_rows(j);
        if obs_rows.len() < 2 {
            continue;
        }
        let x_obs = features_without(current, &obs_rows, j);
        let y: Vec<f64> = obs_rows.iter().map(|&i| w.values.get(i, j)).collect();
        let task = if w.meta(j).is_discrete() {
            Task::Classification
        } else {
            Task::Regression
        };
        let cfg = ForestConfig {
            min_samples_leaf: config.min_samples_leaf.min(obs_rows.len() / 2).max(1),
            seed: SeedBuilder::new(seed)
                .str("missforest")
                .u64(iteration as u64)
                .u64(j as u64)
                .finish(),
            ..config.clone()
        };
        let forest = fit_forest(&x_obs, &y, task, &cfg)?;
        let pred = predict_forest(&forest, &features_without(current, &miss_rows, j))?;
        for (&i, p) in miss_rows.iter().zip(pred) {
            current.set(i, j, p);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MissForestOutcome {
    pub filled: Matrix,
    /// Iterations whose fill was computed (including a rejected final one).
    pub iterations: usize,
    pub continuous_diffs: Vec<f64>,
    pub discrete_diffs: Vec<f64>,
}

fn differences(w: &Working, old: &Matrix, new: &Matrix) -> (Option<f64>, Option<f64>) {
    let (mut num, mut den, mut has_cont) = (0.0, 0.0, false);
    let (mut changed, mut total) = (0usize, 0usize);
    for j in 0..w.n_cols() {
        if w.meta(j).is_discrete() {
            for i in w.missing_rows(j) {
                total += 1;
                if old.get(i, j) != new.get(i, j) {
                    changed += 1;
                }
            }
        } else {
            has_cont = true;
            for i in 0..w.n_rows() {
                let v = new.get(i, j);
                den += v * v;
                if !w.is_observed(i, j) {
                    let diff = v - old.get(i, j);
                    num += diff * diff;
                }
            }
        }
    }
    let cont = has_cont.then(|| if den > 0.0 { num / den } else { 0.0 });
    let disc = (total > 0).then(|| changed as f64 / total as f64);
    (cont, disc)
}

pub(crate) fn run_missforest(w: &Working, config: &ForestConfig, max_iter: usize, seed: u64) -> Result<MissForestOutcome> {
    let mut current = w.initial_fill();
    let mut outcome = MissForestOutcome {
        filled: current.clone(),
        iterations: 0,
        continuous_diffs: Vec::new(),
        discrete_diffs: Vec::new(),
    };
    if w.total_missing() == 0 {
        return Ok(outcome);
    }
    let (mut prev_cont, mut prev_disc) = (f64::INFINITY, f64::INFINITY);
    for iteration in 0..max_iter {
        let mut next = current.clone();
        missforest_pass(w, &mut next, config, seed, iteration)?;
        outcome.iterations = iteration + 1;
        let (cont, disc) = differences(w, &current, &next);
        if let Some(c) = cont {
            outcome.continuous_diffs.push(c);
        }
        if let Some(d) = disc {
            outcome.discrete_diffs.push(d);
        }
        let cont_up = cont.is_none_or(|c| c > prev_cont);
        let disc_up = disc.is_none_or(|d| d > prev_disc);
        if cont_up && disc_up {
            break;
        }
        prev_cont = cont.unwrap_or(prev_cont);
        prev_disc = disc.unwrap_or(prev_disc);
        current = next;
    }
    outcome.filled = current;
    Ok(outcome)
}

/// MissForest: iterate forest refits until the fill difference first grows,
/// then return the fill from before that iteration.
pub fn impute_missforest(
    table: &DataTable,
    mask: &MissingMask,
    config: &ForestConfig,
    max_iter: usize,
) -> Result<ImputationResult> {
    let started = Instant::now();
    config.validate()?;
    let w = Working::new(table, mask)?;
    w.require_observed()?;
    let out = run_missforest(&w, config, max_iter, config.seed)?;
    let mut params = Params::new();
    params.insert("iterations".into(), json!(out.iterations));
    params.insert("max_iter".into(), json!(max_iter));
    params.insert("continuous_diffs".into(), json!(out.continuous_diffs));
    params.insert("discrete_diffs".into(), json!(out.discrete_diffs));
    params.insert("n_trees".into(), json!(config.n_trees));
    w.finalize(&out.filled, "missforest", started, params)
}
