//! Imputation quality metrics: error scores on masked cells and
//! distribution distances between observed and imputed values.

mod kernel;
mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use kernel::{column_points, median_heuristic, mmd, mmd_1d, mmd_with_bandwidth};
pub use sinkhorn::{
    entropic_transport, reduce_sample, sinkhorn_divergence, transport_plan, SinkhornConfig, SinkhornOutput,
    TransportSolution,
};

use crate::amputation::MissingMask;
use crate::data::{DataTable, Scaling};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    #[default]
    Range,
    Std,
}

/// A per-column score plus its aggregate; `None` marks an ineligible column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScores {
    pub per_column: Vec<Option<f64>>,
    pub aggregate: Option<f64>,
    pub notes: Vec<String>,
}

fn check_shapes(truth: &DataTable, imputed: &Matrix, mask: &MissingMask) -> Result<()> {
    let (n, d) = (truth.n_rows(), truth.n_cols());
    if imputed.rows() != n || imputed.cols() != d || mask.rows() != n || mask.cols() != d {
        return Err(Error::Param(format!(
            "shape mismatch: truth {n}x{d}, imputed {}x{}, mask {}x{}",
            imputed.rows(),
            imputed.cols(),
            mask.rows(),
            mask.cols()
        )));
    }
    Ok(())
}

/// (truth, imputed) pairs for column `j` over masked cells with a known truth.
fn masked_pairs(truth: &DataTable, imputed: &Matrix, mask: &MissingMask, j: usize) -> Vec<(f64, f64)> {
    (0..truth.n_rows())
        .filter(|&i| mask.is_masked(i, j))
        .filter_map(|i| truth.get(i, j).map(|t| (t, imputed.get(i, j))))
        .collect()
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| stats::mean(&v))
}

/// RMSE over masked cells divided by the column's true range (or standard
/// deviation). Aggregate is the mean over scored columns.
pub fn nrmse(truth: &DataTable, imputed: &Matrix, mask: &MissingMask, normalizer: Normalizer) -> Result<ColumnScores> {
    check_shapes(truth, imputed, mask)?;
    let mut notes = Vec::new();
    let per_column: Vec<Option<f64>> = (0..truth.n_cols())
        .map(|j| {
            let pairs = masked_pairs(truth, imputed, mask, j);
            if pairs.is_empty() {
                return None;
            }
            let col = truth.observed_values(j);
            let scale = match normalizer {
                Normalizer::Range => {
                    let s = stats::sorted(&col);
                    s[s.len() - 1] - s[0]
                }
                Normalizer::Std => stats::std_dev(&col),
            };
            if !(scale > 0.0) {
                notes.push(format!("nrmse: column `{}` has zero spread", truth.column(j).name));
                return None;
            }
            let mse = pairs.iter().map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / pairs.len() as f64;
            Some(mse.sqrt() / scale)
        })
        .collect();
    let aggregate = mean_of(&per_column);
    Ok(ColumnScores {
        per_column,
        aggregate,
        notes,
    })
}

/// Mean absolute error per column; the aggregate pools every masked cell.
pub fn mae(truth: &DataTable, imputed: &Matrix, mask: &MissingMask) -> Result<ColumnScores> {
    check_shapes(truth, imputed, mask)?;
    let (mut total, mut count) = (0.0, 0usize);
    let per_column = (0..truth.n_cols())
        .map(|j| {
            let pairs = masked_pairs(truth, imputed, mask, j);
            if pairs.is_empty() {
                return None;
            }
            let s: f64 = pairs.iter().map(|(t, p)| (t - p).abs()).sum();
            total += s;
            count += pairs.len();
            Some(s / pairs.len() as f64)
        })
        .collect();
    Ok(ColumnScores {
        per_column,
        aggregate: (count > 0).then(|| total / count as f64),
        notes: Vec::new(),
    })
}

/// `1 - Var(truth - imputed) / Var(truth)` over masked cells.
pub fn pev(truth: &DataTable, imputed: &Matrix, mask: &MissingMask) -> Result<ColumnScores> {
    check_shapes(truth, imputed, mask)?;
    let mut notes = Vec::new();
    let per_column: Vec<Option<f64>> = (0..truth.n_cols())
        .map(|j| {
            let pairs = masked_pairs(truth, imputed, mask, j);
            if pairs.len() < 2 {
                return None;
            }
            let t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let r: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
            let vt = stats::variance(&t);
            if !(vt > 0.0) {
                notes.push(format!("pev: column `{}` has constant masked truth", truth.column(j).name));
                return None;
            }
            Some(1.0 - stats::variance(&r) / vt)
        })
        .collect();
    let aggregate = mean_of(&per_column);
    Ok(ColumnScores {
        per_column,
        aggregate,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub normalizer: Normalizer,
    pub sinkhorn: SinkhornConfig,
    /// Also compare full rows (observed rows vs rows with an imputed cell).
    pub full_rows: bool,
    /// Skip the Sinkhorn divergence entirely.
    pub skip_sinkhorn: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            normalizer: Normalizer::Range,
            sinkhorn: SinkhornConfig::default(),
            full_rows: false,
            skip_sinkhorn: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMetrics {
    pub column: String,
    pub nrmse: Option<f64>,
    pub mae: Option<f64>,
    pub pev: Option<f64>,
    pub mmd: Option<f64>,
    pub sinkhorn: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub nrmse: Option<f64>,
    pub mae: Option<f64>,
    pub pev: Option<f64>,
    pub mmd: Option<f64>,
    pub sinkhorn: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub mmd: f64,
    pub sinkhorn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_column: Vec<ColumnMetrics>,
    pub aggregate: AggregateMetrics,
    pub wall_time_s: f64,
    pub sinkhorn_unconverged: usize,
    pub full_rows: Option<RowMetrics>,
    pub notes: Vec<String>,
}

/// Standardized (observed, imputed) value sets of column `j`, scaled by the
/// true column's mean and standard deviation.
fn distribution_sets(truth: &DataTable, imputed: &Matrix, mask: &MissingMask, j: usize) -> (Vec<f64>, Vec<f64>) {
    let sc = Scaling::from_observed(&truth.observed_values(j));
    let mut observed = Vec::new();
    let mut filled = Vec::new();
    for i in 0..truth.n_rows() {
        if mask.is_masked(i, j) {
            if truth.get(i, j).is_some() {
                filled.push(sc.forward(imputed.get(i, j)));
            }
        } else if let Some(v) = truth.get(i, j) {
            observed.push(sc.forward(v));
        }
    }
    (observed, filled)
}

fn row_sets(truth: &DataTable, imputed: &Matrix, mask: &MissingMask) -> (Matrix, Matrix) {
    let d = truth.n_cols();
    let scalings: Vec<Scaling> = (0..d).map(|j| Scaling::from_observed(&truth.observed_values(j))).collect();
    let (mut obs, mut imp) = (Vec::new(), Vec::new());
    for i in 0..truth.n_rows() {
        if (0..d).any(|j| truth.get(i, j).is_none()) {
            continue;
        }
        let row: Vec<f64> = (0..d).map(|j| scalings[j].forward(imputed.get(i, j))).collect();
        if (0..d).any(|j| mask.is_masked(i, j)) {
            imp.extend(row);
        } else {
            obs.extend(row);
        }
    }
    (Matrix::from_vec(obs.len() / d, d, obs), Matrix::from_vec(imp.len() / d, d, imp))
}

/// All five metrics plus the timing, per column and aggregated. Distribution
/// metrics compare observed cells with imputed cells on standardized values.
pub fn evaluate(
    truth: &DataTable,
    imputed: &Matrix,
    mask: &MissingMask,
    wall_time_s: f64,
    options: &EvalOptions,
) -> Result<MetricReport> {
    check_shapes(truth, imputed, mask)?;
    options.sinkhorn.validate()?;
    let nr = nrmse(truth, imputed, mask, options.normalizer)?;
    let ma = mae(truth, imputed, mask)?;
    let pe = pev(truth, imputed, mask)?;
    let mut notes: Vec<String> = nr.notes.iter().chain(&pe.notes).cloned().collect();
    let mut unconverged = 0;
    let mut per_column = Vec::with_capacity(truth.n_cols());
    for j in 0..truth.n_cols() {
        let (observed, filled) = distribution_sets(truth, imputed, mask, j);
        let (mut mmd_v, mut sk) = (None, None);
        if !observed.is_empty() && !filled.is_empty() {
            let (a, b) = (column_points(&observed), column_points(&filled));
            mmd_v = Some(mmd(&a, &b));
            if !options.skip_sinkhorn {
                let out = sinkhorn_divergence(&a, &b, &options.sinkhorn)?;
                if !out.converged {
                    unconverged += 1;
                    notes.push(format!(
                        "sinkhorn: column `{}` stopped at violation {:.3e}",
                        truth.column(j).name,
                        out.marginal_violation
                    ));
                }
                sk = Some(out.value);
            }
        }
        per_column.push(ColumnMetrics {
            column: truth.column(j).name.clone(),
            nrmse: nr.per_column[j],
            mae: ma.per_column[j],
            pev: pe.per_column[j],
            mmd: mmd_v,
            sinkhorn: sk,
        });
    }
    let mmds: Vec<Option<f64>> = per_column.iter().map(|c| c.mmd).collect();
    let sks: Vec<Option<f64>> = per_column.iter().map(|c| c.sinkhorn).collect();
    let full_rows = if options.full_rows {
        let (a, b) = row_sets(truth, imputed, mask);
        if a.rows() > 0 && b.rows() > 0 {
            let sk = if options.skip_sinkhorn {
                None
            } else {
                Some(sinkhorn_divergence(&a, &b, &options.sinkhorn)?.value)
            };
            Some(RowMetrics { mmd: mmd(&a, &b), sinkhorn: sk })
        } else {
            None
        }
    } else {
        None
    };
    Ok(MetricReport {
        per_column,
        aggregate: AggregateMetrics {
            nrmse: nr.aggregate,
            mae: ma.aggregate,
            pev: pe.aggregate,
            mmd: mean_of(&mmds),
            sinkhorn: mean_of(&sks),
        },
        wall_time_s,
        sinkhorn_unconverged: unconverged,
        full_rows,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataTable;

    fn table(cols: &[Vec<f64>]) -> DataTable {
        let n = cols[0].len();
        let names = (0..cols.len()).map(|j| format!("c{j}")).collect();
        let cells = (0..n).flat_map(|i| cols.iter().map(move |c| Some(c[i]))).collect();
        let kinds = vec![crate::data::ColumnKind::Continuous; cols.len()];
        DataTable::new("t", names, cells, Some(&kinds), None).unwrap()
    }

    fn all_masked(n: usize, d: usize) -> MissingMask {
        let mut m = MissingMask::none(n, d);
        for i in 0..n {
            for j in 0..d {
                m.mask.set(i, j, true);
            }
        }
        m
    }

    #[test]
    fn nrmse_range_normalized() {
        let truth: Vec<f64> = (0..=10).map(f64::from).collect();
        let t = table(&[truth.clone(), truth.clone()]);
        let mut imp = t.to_matrix();
        for i in 0..11 {
            imp.set(i, 0, truth[i] + 1.0);
        }
        let s = nrmse(&t, &imp, &all_masked(11, 2), Normalizer::Range).unwrap();
        assert!((s.per_column[0].unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(s.per_column[1], Some(0.0));
    }

    #[test]
    fn mae_pools_cells() {
        let t = table(&[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let imp = Matrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 0.0], vec![0.0, 2.0]]);
        let mut m = MissingMask::none(3, 2);
        m.mask.set(0, 0, true);
        m.mask.set(1, 0, true);
        m.mask.set(2, 1, true);
        let s = mae(&t, &imp, &m).unwrap();
        assert_eq!(s.per_column, vec![Some(2.0), Some(2.0)]);
        assert_eq!(s.aggregate, Some(2.0));
    }

    #[test]
    fn pev_reference_values() {
        let truth = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        let t = table(&[truth.clone(), truth.clone()]);
        let mut imp = Matrix::zeros(5, 2);
        for i in 0..5 {
            imp.set(i, 1, -truth[i]);
        }
        let s = pev(&t, &imp, &all_masked(5, 2)).unwrap();
        assert!(s.per_column[0].unwrap().abs() < 1e-12);
        assert!((s.per_column[1].unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_range_column_is_noted() {
        let t = table(&[vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0]]);
        let s = nrmse(&t, &t.to_matrix(), &all_masked(3, 2), Normalizer::Range).unwrap();
        assert_eq!(s.per_column[0], None);
        assert_eq!(s.notes.len(), 1);
    }

    #[test]
    fn report_round_trips_json() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.11).cos()).collect();
        let t = table(&[x, y]);
        let mut m = MissingMask::none(40, 2);
        for i in (0..40).step_by(3) {
            m.mask.set(i, i % 2, true);
        }
        let mut imp = t.to_matrix();
        imp.set(0, 0, 0.25);
        let opts = EvalOptions {
            full_rows: true,
            ..EvalOptions::default()
        };
        let r = evaluate(&t, &imp, &m, 0.5, &opts).unwrap();
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.full_rows.is_some());
        let mmds: Vec<f64> = r.per_column.iter().filter_map(|c| c.mmd).collect();
        assert_eq!(r.aggregate.mmd, Some(stats::mean(&mmds)));
    }
}
