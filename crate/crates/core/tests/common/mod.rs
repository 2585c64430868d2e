#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use tabimpute::data::{ColumnKind, DataTable};
use tabimpute::matrix::Matrix;
use tabimpute::seed;

/// Random complete table: the last `n_discrete` columns hold 3 to 5 ordered
/// levels, the rest are correlated continuous columns with random scales.
pub fn random_table(seed_value: u64, rows: usize, cols: usize, n_discrete: usize) -> DataTable {
    let mut rng = seed::rng(seed_value);
    let n_cont = cols - n_discrete.min(cols);
    let scales: Vec<f64> = (0..cols).map(|_| rng.random_range(0.5..20.0)).collect();
    let shifts: Vec<f64> = (0..cols).map(|_| rng.random_range(-50.0..50.0)).collect();
    let levels: Vec<usize> = (0..cols).map(|_| rng.random_range(3..=5)).collect();
    let mut cells = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let f: f64 = rng.sample(StandardNormal);
        for j in 0..cols {
            let e: f64 = rng.sample(StandardNormal);
            let z = 0.8 * f + 0.6 * e;
            let v = if j < n_cont {
                shifts[j] + scales[j] * z
            } else {
                let k = levels[j] as f64;
                ((z + 2.0) / 4.0 * k).floor().clamp(0.0, k - 1.0)
            };
            cells.push(Some(v));
        }
    }
    let kinds: Vec<ColumnKind> = (0..cols)
        .map(|j| if j < n_cont { ColumnKind::Continuous } else { ColumnKind::Discrete })
        .collect();
    let names = (0..cols).map(|j| format!("c{j}")).collect();
    DataTable::new("random", names, cells, Some(&kinds), None).expect("valid random table")
}

pub fn column(m: &Matrix, j: usize) -> Vec<f64> {
    m.column(j)
}
