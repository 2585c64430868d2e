//! Chained-equation regression imputation (MICE) and its multi-run
//! aggregate (SICE).

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::amputation::MissingMask;
use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::imputation::{ImputationResult, Params, Working};
use crate::linalg::cholesky_solve;
use crate::matrix::Matrix;
use crate::seed;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiceConfig {
    pub n_iter: usize,
    /// Ridge penalty used when the least-squares system is singular.
    pub ridge: f64,
    /// Stop once the largest cell change (standardized units) drops below this.
    pub tolerance: f64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        MiceConfig {
            n_iter: 10,
            ridge: 1e-3,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum MiceInit {
    /// Column mean (continuous) or mode (discrete).
    Center,
    /// Random draws from each column's observed values.
    HotDeck { seed: u64 },
}

pub struct MiceFill {
    pub filled: Matrix,
    /// Largest absolute standardized change per sweep.
    pub changes: Vec<f64>,
    pub ridge_columns: Vec<String>,
}

/// Ridge-guarded least squares with an unpenalized intercept in slot 0.
fn fit_column(
    z: &Matrix,
    rows: &[usize],
    target: usize,
    ridge: f64,
) -> Option<(Vec<f64>, bool)> {
    let d = z.cols();
    let p = d; // intercept + (d - 1) predictors
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut x = vec![0.0; p];
    for &i in rows {
        let row = z.row(i);
        x[0] = 1.0;
        let mut t = 1;
        for (j, &v) in row.iter().enumerate() {
            if j != target {
                x[t] = v;
                t += 1;
            }
        }
        let y = row[target];
        for a in 0..p {
            xty[a] += x[a] * y;
            for b in 0..=a {
                xtx[a * p + b] += x[a] * x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[b * p + a] = xtx[a * p + b];
        }
    }
    if let Some(beta) = cholesky_solve(&xtx, &xty, p) {
        return Some((beta, false));
    }
    for a in 1..p {
        xtx[a * p + a] += ridge;
    }
    cholesky_solve(&xtx, &xty, p).map(|b| (b, true))
}

fn predict(beta: &[f64], row: &[f64], target: usize) -> f64 {
    let mut s = beta[0];
    let mut t = 1;
    for (j, &v) in row.iter().enumerate() {
        if j != target {
            s += beta[t] * v;
            t += 1;
        }
    }
    s
}

pub fn mice_fill(w: &Working, cfg: &MiceConfig, init: MiceInit) -> Result<MiceFill> {
    let (n, d) = (w.n_rows(), w.n_cols());
    if d < 2 {
        return Err(Error::Param("MICE needs at least 2 columns".into()));
    }
    let scalings = w.scalings();
    let mut raw = match init {
        MiceInit::Center => w.initial_fill(),
        MiceInit::HotDeck { seed } => {
            let mut rng = seed::rng(seed);
            let mut m = w.values.clone();
            for j in 0..d {
                let obs = w.observed_column(j);
                for i in w.missing_rows(j) {
                    m.set(i, j, obs[rng.random_range(0..obs.len())]);
                }
            }
            m
        }
    };
    let mut z = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            z.set(i, j, scalings[j].forward(raw.get(i, j)));
        }
    }
    let incomplete: Vec<usize> = (0..d).filter(|&j| w.missing_count(j) > 0).collect();
    let observed_rows: Vec<Vec<usize>> = (0..d).map(|j| w.observed_rows(j)).collect();
    let missing_rows: Vec<Vec<usize>> = (0..d).map(|j| w.missing_rows(j)).collect();
    let mut changes = Vec::new();
    let mut ridge_columns = Vec::new();
    for _sweep in 0..cfg.n_iter {
        let mut max_change: f64 = 0.0;
        for &j in &incomplete {
            let (beta, used_ridge) =
                fit_column(&z, &observed_rows[j], j, cfg.ridge).ok_or_else(|| Error::Numeric {
                    column: w.meta(j).name.clone(),
                    reason: "singular regression design despite ridge".into(),
                })?;
            if used_ridge && !ridge_columns.contains(&w.meta(j).name) {
                ridge_columns.push(w.meta(j).name.clone());
            }
            for &i in &missing_rows[j] {
                let mut pred = predict(&beta, z.row(i), j);
                if w.meta(j).is_discrete() {
                    pred = scalings[j].forward(w.snap(j, scalings[j].inverse(pred)));
                }
                max_change = max_change.max((pred - z.get(i, j)).abs());
                z.set(i, j, pred);
            }
        }
        changes.push(max_change);
        if max_change < cfg.tolerance {
            break;
        }
    }
    for &j in &incomplete {
        for &i in &missing_rows[j] {
            raw.set(i, j, scalings[j].inverse(z.get(i, j)));
        }
    }
    Ok(MiceFill {
        filled: raw,
        changes,
        ridge_columns,
    })
}

pub fn impute_mice(table: &DataTable, mask: &MissingMask, cfg: &MiceConfig) -> Result<ImputationResult> {
    let started = Instant::now();
    let w = Working::new(table, mask)?;
    w.require_observed()?;
    let out = mice_fill(&w, cfg, MiceInit::Center)?;
    let mut params = Params::new();
    params.insert("n_iter".into(), json!(cfg.n_iter));
    params.insert("ridge".into(), json!(cfg.ridge));
    params.insert("sweeps".into(), json!(out.changes.len()));
    params.insert("sweep_changes".into(), json!(out.changes));
    params.insert("ridge_columns".into(), json!(out.ridge_columns));
    w.finalize(&out.filled, "mice", started, params)
}

/// Runs MICE `n_runs` times and aggregates: mean for continuous cells, mode
/// for discrete ones. Run 0 uses the deterministic center initialization,
/// later runs a seeded hot-deck initialization.
pub fn impute_sice(
    table: &DataTable,
    mask: &MissingMask,
    cfg: &MiceConfig,
    n_runs: usize,
    seed: u64,
) -> Result<ImputationResult> {
    let started = Instant::now();
    if n_runs == 0 {
        return Err(Error::Param("SICE needs n_runs >= 1".into()));
    }
    let w = Working::new(table, mask)?;
    w.require_observed()?;
    let mut runs = Vec::with_capacity(n_runs);
    for r in 0..n_runs {
        let init = if r == 0 {
            MiceInit::Center
        } else {
            MiceInit::HotDeck {
                seed: seed::derive_indexed(seed, "sice-run", r as u64),
            }
        };
        runs.push(mice_fill(&w, cfg, init)?.filled);
    }
    let mut out = w.values.clone();
    let (mut var_sum, mut var_max, mut var_cells) = (0.0f64, 0.0f64, 0usize);
    for j in 0..w.n_cols() {
        let discrete = w.meta(j).is_discrete();
        for i in w.missing_rows(j) {
            let vals: Vec<f64> = runs.iter().map(|m| m.get(i, j)).collect();
            if discrete {
                let snapped: Vec<f64> = vals.iter().map(|&v| w.snap(j, v)).collect();
                out.set(i, j, stats::mode(&snapped));
            } else {
                out.set(i, j, stats::mean(&vals));
                let v = stats::variance(&vals);
                var_sum += v;
                var_max = var_max.max(v);
                var_cells += 1;
            }
        }
    }
    let mut params = Params::new();
    params.insert("n_runs".into(), json!(n_runs));
    params.insert(
        "run_variance_mean".into(),
        json!(if var_cells > 0 { var_sum / var_cells as f64 } else { 0.0 }),
    );
    params.insert("run_variance_max".into(), json!(var_max));
    w.finalize(&out, "sice", started, params)
}
