//! Shared imputation plumbing: the result type and the observed-cell view
//! every imputer works from.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::amputation::MissingMask;
use crate::data::{ColumnMeta, DataTable, Scaling};
use crate::error::{Error, Result};
use crate::matrix::{BoolMatrix, Matrix};
use crate::stats;

pub type Params = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub completed: Matrix,
    pub method: String,
    pub wall_time_s: f64,
    pub params: Params,
}

/// Cells a method may learn from: present in the table and not masked.
pub struct Working<'a> {
    pub table: &'a DataTable,
    pub observed: BoolMatrix,
    /// Observed values; NaN elsewhere.
    pub values: Matrix,
}

impl<'a> Working<'a> {
    pub fn new(table: &'a DataTable, mask: &MissingMask) -> Result<Self> {
        let (n, d) = (table.n_rows(), table.n_cols());
        if mask.rows() != n || mask.cols() != d {
            return Err(Error::Param(format!(
                "mask shape {}x{} does not match table shape {n}x{d}",
                mask.rows(),
                mask.cols()
            )));
        }
        let mut observed = BoolMatrix::new(n, d, false);
        let mut values = Matrix::filled(n, d, f64::NAN);
        for i in 0..n {
            for j in 0..d {
                if let Some(v) = table.get(i, j) {
                    if !mask.is_masked(i, j) {
                        observed.set(i, j, true);
                        values.set(i, j, v);
                    }
                }
            }
        }
        Ok(Working {
            table,
            observed,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.cols()
    }

    pub fn meta(&self, j: usize) -> &ColumnMeta {
        self.table.column(j)
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed.get(i, j)
    }

    pub fn observed_column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows())
            .filter(|&i| self.is_observed(i, j))
            .map(|i| self.values.get(i, j))
            .collect()
    }

    pub fn missing_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| !self.is_observed(i, j)).collect()
    }

    pub fn observed_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.is_observed(i, j)).collect()
    }

    pub fn missing_count(&self, j: usize) -> usize {
        self.n_rows() - self.observed.column_count(j)
    }

    pub fn missing_ratio(&self, j: usize) -> f64 {
        self.missing_count(j) as f64 / self.n_rows() as f64
    }

    pub fn total_missing(&self) -> usize {
        self.n_rows() * self.n_cols() - self.observed.count()
    }

    /// Errors if any column has no observed cell.
    pub fn require_observed(&self) -> Result<()> {
        for j in 0..self.n_cols() {
            if self.observed.column_count(j) == 0 {
                return Err(Error::NoObserved {
                    column: self.meta(j).name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn scalings(&self) -> Vec<Scaling> {
        (0..self.n_cols())
            .map(|j| Scaling::from_observed(&self.observed_column(j)))
            .collect()
    }

    /// Category values a discrete column may take; observed values when the
    /// table carries no category set.
    pub fn categories(&self, j: usize) -> Vec<f64> {
        let meta = self.meta(j);
        if !meta.categories.is_empty() {
            meta.category_values()
        } else {
            let mut v = stats::sorted(&self.observed_column(j));
            v.dedup();
            v
        }
    }

    /// Snaps to the column's category set for discrete columns.
    pub fn snap(&self, j: usize, v: f64) -> f64 {
        if self.meta(j).is_discrete() {
            stats::nearest_category(&self.categories(j), v)
        } else {
            v
        }
    }

    /// Column mean, or the mode for discrete columns.
    pub fn column_center(&self, j: usize) -> f64 {
        let obs = self.observed_column(j);
        if self.meta(j).is_discrete() {
            stats::mode(&obs)
        } else {
            stats::mean(&obs)
        }
    }

    /// Observed cells filled in, masked cells at the column mean/mode.
    pub fn initial_fill(&self) -> Matrix {
        let mut m = self.values.clone();
        for j in 0..self.n_cols() {
            let c = self.column_center(j);
            for i in self.missing_rows(j) {
                m.set(i, j, c);
            }
        }
        m
    }

    /// Restores observed cells bit-exactly, snaps discrete imputations and
    /// checks completeness.
    pub fn finalize(&self, filled: &Matrix, method: &str, started: Instant, params: Params) -> Result<ImputationResult> {
        let mut completed = filled.clone();
        for j in 0..self.n_cols() {
            let cats = self.meta(j).is_discrete().then(|| self.categories(j));
            for i in 0..self.n_rows() {
                if self.is_observed(i, j) {
                    completed.set(i, j, self.values.get(i, j));
                    continue;
                }
                let v = completed.get(i, j);
                if !v.is_finite() {
                    return Err(Error::Numeric {
                        column: self.meta(j).name.clone(),
                        reason: format!("{method} produced a non-finite value in row {i}"),
                    });
                }
                if let Some(c) = &cats {
                    completed.set(i, j, stats::nearest_category(c, v));
                }
            }
        }
        Ok(ImputationResult {
            completed,
            method: method.to_string(),
            wall_time_s: started.elapsed().as_secs_f64(),
            params,
        })
    }
}
