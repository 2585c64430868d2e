//! Random forests grown from scratch, and the MissForest imputer built on them.

mod missforest;
mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use missforest::{impute_missforest, missforest_pass, MissForestOutcome};
pub use tree::{DecisionTree, Node, Task};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;
use tree::TreeParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 10,
            min_samples_leaf: 5,
            mtry: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn mtry_for(&self, d: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (d as f64).sqrt().round() as usize)
            .clamp(1, d.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Param("forest needs n_trees >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Param("forest needs min_samples_leaf >= 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::Param("forest needs mtry >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub task: Task,
    pub n_features: usize,
}

/// Fits `config.n_trees` trees, each on a bootstrap sample of size `n` with
/// an `mtry`-sized random feature subset per split. Tree `t` draws from a
/// stream seeded by `(config.seed, t)` only.
pub fn fit_forest(x: &Matrix, y: &[f64], task: Task, config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    let n = x.rows();
    if y.len() != n {
        return Err(Error::Param(format!("X has {n} rows but y has {}", y.len())));
    }
    if n < 2 * config.min_samples_leaf {
        return Err(Error::Param(format!(
            "forest needs at least {} rows, got {n}",
            2 * config.min_samples_leaf
        )));
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Param("forest inputs must be finite".into()));
    }
    let d = x.cols();
    let (classes, class_of) = match task {
        Task::Regression => (Vec::new(), Vec::new()),
        Task::Classification => {
            let mut classes = crate::stats::sorted(y);
            classes.dedup();
            let class_of = y
                .iter()
                .map(|v| classes.binary_search_by(|c| c.total_cmp(v)).expect("class present"))
                .collect();
            (classes, class_of)
        }
    };
    let params = TreeParams {
        task,
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        mtry: config.mtry_for(d),
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            use rand::Rng;
            let mut rng = seed::rng(seed::derive_indexed(config.seed, "tree", t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            DecisionTree::fit(x, y, &class_of, &classes, rows, &params, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        task,
        n_features: d,
    })
}

impl Forest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let outputs = self.trees.iter().map(|t| t.predict_row(row));
        match self.task {
            Task::Regression => outputs.sum::<f64>() / self.trees.len() as f64,
            Task::Classification => tree::vote(outputs),
        }
    }

    /// Combines two forests of the same task into one ensemble.
    pub fn pool(mut self, other: Forest) -> Forest {
        assert_eq!(self.task, other.task);
        assert_eq!(self.n_features, other.n_features);
        self.trees.extend(other.trees);
        self
    }
}

pub fn predict_forest(forest: &Forest, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != forest.n_features {
        return Err(Error::Param(format!(
            "forest was trained on {} features, got {}",
            forest.n_features,
            x.cols()
        )));
    }
    Ok((0..x.rows()).map(|i| forest.predict_row(x.row(i))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn regression_data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = crate::seed::rng(seed);
        let mut x = Matrix::zeros(n, 3);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..3 {
                x.set(i, j, rng.sample(StandardNormal));
            }
            y.push(x.get(i, 0) * 2.0 + x.get(i, 1).sin());
        }
        (x, y)
    }

    fn small(seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: 20,
            seed,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (x, _) = regression_data(50, 1);
        let y = vec![4.25; 50];
        let f = fit_forest(&x, &y, Task::Regression, &small(1)).unwrap();
        for p in predict_forest(&f, &x).unwrap() {
            assert_eq!(p, 4.25);
        }
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn step_function_is_learned() {
        for s in 0..5 {
            let mut rng = crate::seed::rng(100 + s);
            let mut x = Matrix::zeros(200, 2);
            let mut y = Vec::new();
            for i in 0..200 {
                let v: f64 = rng.sample(StandardNormal);
                x.set(i, 0, v);
                x.set(i, 1, rng.sample(StandardNormal));
                y.push(if v > 0.0 { 1.0 } else { 0.0 });
            }
            let f = fit_forest(&x, &y, Task::Classification, &small(s)).unwrap();
            let pred = predict_forest(&f, &x).unwrap();
            let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 200.0;
            assert!(acc >= 0.95, "seed {s}: accuracy {acc}");
        }
    }

    #[test]
    fn structure_respects_depth_and_leaf_size() {
        let (x, y) = regression_data(400, 2);
        let cfg = ForestConfig {
            n_trees: 10,
            max_depth: 4,
            min_samples_leaf: 7,
            ..ForestConfig::default()
        };
        let f = fit_forest(&x, &y, Task::Regression, &cfg).unwrap();
        for t in &f.trees {
            assert!(t.depth() <= 4);
            for (_, samples, _) in t.leaves() {
                assert!(samples >= 7);
            }
        }
        let f = fit_forest(&x, &y, Task::Regression, &ForestConfig::default()).unwrap();
        assert!(f.trees.iter().all(|t| t.depth() <= 10));
    }

    #[test]
    fn refit_is_bit_identical() {
        let (x, y) = regression_data(120, 3);
        let a = fit_forest(&x, &y, Task::Regression, &small(9)).unwrap();
        let b = fit_forest(&x, &y, Task::Regression, &small(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regression_predictions_within_target_range() {
        let (x, y) = regression_data(150, 4);
        let f = fit_forest(&x, &y, Task::Regression, &small(4)).unwrap();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let (xt, _) = regression_data(100, 44);
        for p in predict_forest(&f, &xt).unwrap() {
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn single_tree_forest_equals_its_tree() {
        let (x, y) = regression_data(80, 5);
        let cfg = ForestConfig { n_trees: 1, ..small(5) };
        let f = fit_forest(&x, &y, Task::Regression, &cfg).unwrap();
        for i in 0..80 {
            assert_eq!(f.predict_row(x.row(i)), f.trees[0].predict_row(x.row(i)));
        }
    }

    #[test]
    fn pooled_forest_averages_members() {
        let (x, y) = regression_data(90, 6);
        let a = fit_forest(&x, &y, Task::Regression, &small(1)).unwrap();
        let b = fit_forest(&x, &y, Task::Regression, &small(2)).unwrap();
        let pa = predict_forest(&a, &x).unwrap();
        let pb = predict_forest(&b, &x).unwrap();
        let pooled = a.pool(b);
        let pp = predict_forest(&pooled, &x).unwrap();
        for i in 0..90 {
            assert!(((pa[i] + pb[i]) / 2.0 - pp[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_too_few_rows_and_bad_width() {
        let (x, y) = regression_data(9, 7);
        assert!(fit_forest(&x, &y, Task::Regression, &ForestConfig::default()).is_err());
        let (x, y) = regression_data(20, 7);
        let f = fit_forest(&x, &y, Task::Regression, &small(1)).unwrap();
        assert!(predict_forest(&f, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn mtry_default_is_rounded_root() {
        let cfg = ForestConfig::default();
        assert_eq!(cfg.mtry_for(7), 3);
        assert_eq!(cfg.mtry_for(2), 1);
        assert_eq!(cfg.mtry_for(20), 4);
    }
}
