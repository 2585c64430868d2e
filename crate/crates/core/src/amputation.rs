//! Reproducible missingness generation (MCAR and logistic MAR) for benchmark
//! construction.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::matrix::BoolMatrix;
use crate::seed::{self, SeedBuilder};
use crate::stats;

pub const MAX_RATE: f64 = 0.5;

/// Missingness levels of the standard benchmark grid.
pub const GRID_RATES: [f64; 5] = [0.05, 0.10, 0.20, 0.30, 0.40];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    /// Mask taken from cells that were already missing in the input.
    External,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::External => "external",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            other => Err(Error::Param(format!(
                "unknown mechanism `{other}` (expected mcar or mar)"
            ))),
        }
    }
}

/// A removal mask (`true` = removed) plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingMask {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub seed: u64,
    pub replicate: usize,
    /// Logistic slope on the donor column (MAR only).
    pub beta: f64,
    /// Cells un-masked to keep every row partially observed.
    pub repaired_cells: usize,
    pub mask: BoolMatrix,
}

/// Serialized mask metadata written next to the 0/1 CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub seed: u64,
    pub replicate: usize,
    pub beta: f64,
    pub achieved_rate: f64,
    pub column_rates: Vec<f64>,
    pub repaired_cells: usize,
}

impl MissingMask {
    /// Empty mask (nothing removed).
    pub fn none(rows: usize, cols: usize) -> Self {
        MissingMask {
            mechanism: Mechanism::External,
            rate: 0.0,
            seed: 0,
            replicate: 0,
            beta: 0.0,
            repaired_cells: 0,
            mask: BoolMatrix::new(rows, cols, false),
        }
    }

    /// Mask of the cells already missing in `table`.
    pub fn from_missing(table: &DataTable) -> Self {
        let (n, d) = (table.n_rows(), table.n_cols());
        let mut mask = BoolMatrix::new(n, d, false);
        for i in 0..n {
            for j in 0..d {
                mask.set(i, j, table.get(i, j).is_none());
            }
        }
        let mut m = MissingMask::none(n, d);
        m.rate = mask.count() as f64 / (n * d) as f64;
        m.mask = mask;
        m
    }

    #[inline]
    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.mask.get(i, j)
    }

    pub fn rows(&self) -> usize {
        self.mask.rows()
    }

    pub fn cols(&self) -> usize {
        self.mask.cols()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.count()
    }

    pub fn achieved_rate(&self) -> f64 {
        self.mask.count() as f64 / (self.rows() * self.cols()) as f64
    }

    pub fn column_rates(&self) -> Vec<f64> {
        (0..self.cols())
            .map(|j| self.mask.column_count(j) as f64 / self.rows() as f64)
            .collect()
    }

    /// Union with the cells already missing in `table`.
    pub fn union_missing(&self, table: &DataTable) -> MissingMask {
        let mut out = self.clone();
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                if table.get(i, j).is_none() {
                    out.mask.set(i, j, true);
                }
            }
        }
        out
    }

    pub fn sidecar(&self) -> MaskSidecar {
        MaskSidecar {
            mechanism: self.mechanism,
            rate: self.rate,
            seed: self.seed,
            replicate: self.replicate,
            beta: self.beta,
            achieved_rate: self.achieved_rate(),
            column_rates: self.column_rates(),
            repaired_cells: self.repaired_cells,
        }
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = names.join(",");
        out.push('\n');
        for i in 0..self.rows() {
            let row: Vec<&str> = (0..self.cols())
                .map(|j| if self.is_masked(i, j) { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Reads a 0/1 mask CSV with a header row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let d = names.len();
        let mut cells = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != d {
                return Err(Error::Schema(format!("mask row {} has wrong width", row + 1)));
            }
            for (j, tok) in record.iter().enumerate() {
                cells.push(match tok {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::Parse {
                            row: row + 1,
                            column: names[j].clone(),
                            token: other.to_string(),
                        })
                    }
                });
            }
        }
        let n = cells.len() / d.max(1);
        let mut m = MissingMask::none(n, d);
        m.mask = BoolMatrix::from_vec(n, d, cells);
        m.rate = m.achieved_rate();
        Ok(m)
    }
}

fn check_inputs(table: &DataTable, rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate <= MAX_RATE) {
        return Err(Error::Param(format!(
            "rate must lie in (0, {MAX_RATE}], got {rate}"
        )));
    }
    if !table.is_complete() {
        return Err(Error::Param("amputation needs a fully observed table".into()));
    }
    Ok(())
}

/// Number of cells to remove from one column.
fn column_target(n: usize, rate: f64) -> usize {
    ((rate * n as f64).round() as usize).min(n.saturating_sub(1))
}

/// Independent Bernoulli draws with probabilities `probs`, then corrected to
/// exactly `k` removals: surplus removals are dropped uniformly, deficits are
/// filled by probability-weighted sampling among the kept cells.
fn draw_column(probs: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut removed: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    let count = removed.iter().filter(|&&r| r).count();
    if count > k {
        let mut chosen: Vec<usize> = (0..probs.len()).filter(|&i| removed[i]).collect();
        chosen.shuffle(rng);
        for &i in &chosen[..count - k] {
            removed[i] = false;
        }
    } else if count < k {
        // Efraimidis-Spirakis keys: weighted sampling without replacement.
        let mut keyed: Vec<(f64, usize)> = (0..probs.len())
            .filter(|&i| !removed[i])
            .map(|i| {
                let u: f64 = rng.random();
                let w = probs[i].max(1e-300);
                (u.ln() / w, i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in keyed.iter().take(k - count) {
            removed[i] = true;
        }
    }
    removed
}

fn column_rng(seed: u64, tag: &str, j: usize) -> ChaCha8Rng {
    seed::rng(SeedBuilder::new(seed).str(tag).u64(j as u64).finish())
}

/// Un-masks one uniformly chosen cell in every fully-masked row.
fn repair_rows(mask: &mut BoolMatrix, seed: u64) -> usize {
    let mut rng = seed::rng(seed::derive(seed, "repair"));
    let d = mask.cols();
    let mut repaired = 0;
    for i in 0..mask.rows() {
        if (0..d).all(|j| mask.get(i, j)) {
            let j = rng.random_range(0..d);
            mask.set(i, j, false);
            repaired += 1;
        }
    }
    repaired
}

fn finish(
    mechanism: Mechanism,
    rate: f64,
    seed: u64,
    beta: f64,
    mut mask: BoolMatrix,
) -> MissingMask {
    let repaired_cells = repair_rows(&mut mask, seed);
    MissingMask {
        mechanism,
        rate,
        seed,
        replicate: 0,
        beta,
        repaired_cells,
        mask,
    }
}

/// Completely-at-random removal at `rate` per column.
pub fn ampute_mcar(table: &DataTable, rate: f64, seed: u64) -> Result<MissingMask> {
    check_inputs(table, rate)?;
    let (n, d) = (table.n_rows(), table.n_cols());
    let k = column_target(n, rate);
    let probs = vec![rate; n];
    let mut mask = BoolMatrix::new(n, d, false);
    for j in 0..d {
        let mut rng = column_rng(seed, "mcar", j);
        for (i, r) in draw_column(&probs, k, &mut rng).into_iter().enumerate() {
            mask.set(i, j, r);
        }
    }
    Ok(finish(Mechanism::Mcar, rate, seed, 0.0, mask))
}

/// Logistic MAR removal with unit slope; see [`ampute_mar_with_beta`].
pub fn ampute_mar(table: &DataTable, rate: f64, seed: u64) -> Result<MissingMask> {
    ampute_mar_with_beta(table, rate, seed, 1.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intercept `alpha` such that `mean(sigmoid(alpha + beta * z)) == rate`.
pub fn calibrate_intercept(z: &[f64], beta: f64, rate: f64) -> f64 {
    let mean_prob = |alpha: f64| z.iter().map(|&v| sigmoid(alpha + beta * v)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Donor column used to drive the removal of column `j` (round-robin).
pub fn donor_column(j: usize, d: usize) -> usize {
    (j + 1) % d
}

/// Missing-at-random removal: cell `(i, j)` is removed with probability
/// `sigmoid(alpha_j + beta * z[i, donor(j)])`, where `z` is the standardized
/// donor column and `alpha_j` is calibrated so the expected column rate is
/// `rate`. Every column is a target, so every column receives missingness.
pub fn ampute_mar_with_beta(table: &DataTable, rate: f64, seed: u64, beta: f64) -> Result<MissingMask> {
    check_inputs(table, rate)?;
    let (n, d) = (table.n_rows(), table.n_cols());
    if d < 2 {
        return Err(Error::Param("MAR amputation needs at least 2 columns".into()));
    }
    let k = column_target(n, rate);
    let mut mask = BoolMatrix::new(n, d, false);
    for j in 0..d {
        let donor = table.observed_values(donor_column(j, d));
        let (m, s) = (stats::mean(&donor), stats::std_dev(&donor));
        let z: Vec<f64> = donor
            .iter()
            .map(|&v| if s > 0.0 { (v - m) / s } else { 0.0 })
            .collect();
        let alpha = calibrate_intercept(&z, beta, rate);
        let probs: Vec<f64> = z.iter().map(|&v| sigmoid(alpha + beta * v)).collect();
        let mut rng = column_rng(seed, "mar", j);
        for (i, r) in draw_column(&probs, k, &mut rng).into_iter().enumerate() {
            mask.set(i, j, r);
        }
    }
    Ok(finish(Mechanism::Mar, rate, seed, beta, mask))
}

pub fn ampute(table: &DataTable, mechanism: Mechanism, rate: f64, seed: u64) -> Result<MissingMask> {
    match mechanism {
        Mechanism::Mcar => ampute_mcar(table, rate, seed),
        Mechanism::Mar => ampute_mar(table, rate, seed),
        Mechanism::External => Err(Error::Param("external masks cannot be generated".into())),
    }
}

/// Seed for one (dataset, rate, replicate) cell of a grid.
pub fn mask_seed(base_seed: u64, dataset: &str, rate: f64, replicate: usize) -> u64 {
    SeedBuilder::new(base_seed)
        .str("mask")
        .str(dataset)
        .f64(rate)
        .u64(replicate as u64)
        .finish()
}

/// One mask per (rate, replicate), ordered rate-major.
pub fn replicate_grid(
    table: &DataTable,
    mechanism: Mechanism,
    rates: &[f64],
    n_reps: usize,
    base_seed: u64,
) -> Result<Vec<MissingMask>> {
    if rates.is_empty() || n_reps == 0 {
        return Err(Error::Param("replicate grid needs rates and n_reps >= 1".into()));
    }
    let mut out = Vec::with_capacity(rates.len() * n_reps);
    for &rate in rates {
        for rep in 0..n_reps {
            let mut m = ampute(table, mechanism, rate, mask_seed(base_seed, table.name(), rate, rep))?;
            m.replicate = rep;
            out.push(m);
        }
    }
    Ok(out)
}
