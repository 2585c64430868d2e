//! Seeded synthetic table generators used by tests, fixtures and bench configs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, DataTable};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Equicorrelated Gaussian columns with pairwise correlation `rho`.
    CorrelatedGaussian,
    /// Two latent factors pushed through column-specific nonlinearities.
    NonlinearMixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
    /// Columns quantized into `categories` ordered levels.
    #[serde(default)]
    pub discrete_cols: Vec<usize>,
    #[serde(default = "default_categories")]
    pub categories: usize,
}

fn default_rho() -> f64 {
    0.7
}

fn default_categories() -> usize {
    4
}

impl SyntheticSpec {
    pub fn correlated_gaussian(rows: usize, cols: usize, rho: f64, seed: u64) -> Self {
        SyntheticSpec {
            generator: Generator::CorrelatedGaussian,
            rows,
            cols,
            rho,
            seed,
            discrete_cols: Vec::new(),
            categories: default_categories(),
        }
    }

    pub fn generate(&self, name: &str) -> Result<DataTable> {
        if self.rows == 0 || self.cols < 2 {
            return Err(Error::Param("synthetic table needs rows >= 1 and cols >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Param(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.categories < 2 {
            return Err(Error::Param("categories must be at least 2".into()));
        }
        if let Some(&bad) = self.discrete_cols.iter().find(|&&c| c >= self.cols) {
            return Err(Error::Param(format!("discrete column {bad} out of range")));
        }
        let mut rng = seed::rng(seed::derive(self.seed, "synthetic"));
        let d = self.cols;
        let mut cells = Vec::with_capacity(self.rows * d);
        for _ in 0..self.rows {
            match self.generator {
                Generator::CorrelatedGaussian => {
                    let f: f64 = rng.sample(StandardNormal);
                    let (a, b) = (self.rho.sqrt(), (1.0 - self.rho).sqrt());
                    for _ in 0..d {
                        let e: f64 = rng.sample(StandardNormal);
                        cells.push(a * f + b * e);
                    }
                }
                Generator::NonlinearMixed => {
                    let f1: f64 = rng.sample(StandardNormal);
                    let f2: f64 = rng.sample(StandardNormal);
                    for j in 0..d {
                        let e: f64 = rng.sample(StandardNormal);
                        let signal = match j % 4 {
                            0 => f1,
                            1 => f1 * f1 - 1.0 + 0.5 * f2,
                            2 => (1.5 * f2).sin() + 0.5 * f1,
                            _ => f1.max(0.0) - f2.min(0.0) * 0.5,
                        };
                        cells.push(signal + 0.3 * e);
                    }
                }
            }
        }
        let mut kinds = vec![ColumnKind::Continuous; d];
        for &j in &self.discrete_cols {
            kinds[j] = ColumnKind::Discrete;
            let mut col: Vec<f64> = (0..self.rows).map(|i| cells[i * d + j]).collect();
            col.sort_by(f64::total_cmp);
            let k = self.categories;
            let cuts: Vec<f64> = (1..k)
                .map(|c| crate::stats::quantile_sorted(&col, c as f64 / k as f64))
                .collect();
            for i in 0..self.rows {
                let v = cells[i * d + j];
                cells[i * d + j] = cuts.iter().filter(|&&c| v > c).count() as f64;
            }
        }
        let names = (0..d).map(|j| format!("x{j}")).collect();
        DataTable::new(
            name,
            names,
            cells.into_iter().map(Some).collect(),
            Some(&kinds),
            None,
        )
    }
}

/// Equicorrelated Gaussian table, all columns continuous.
pub fn correlated_gaussian(name: &str, rows: usize, cols: usize, rho: f64, seed: u64) -> DataTable {
    SyntheticSpec::correlated_gaussian(rows, cols, rho, seed)
        .generate(name)
        .expect("valid synthetic spec")
}
