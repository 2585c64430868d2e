//! CART-style decision trees with exhaustive midpoint splits.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
        depth: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        depth: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub task: Task,
}

pub(crate) struct TreeParams {
    pub task: Task,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub mtry: usize,
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    /// Class index per row (classification only).
    class_of: &'a [usize],
    classes: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    scratch: Vec<(f64, usize)>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { depth, .. } | Node::Split { depth, .. } => *depth,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf {
                value,
                samples,
                depth,
            } => Some((*value, *samples, *depth)),
            _ => None,
        })
    }

    /// Grows a tree on the given (possibly repeated) row indices.
    pub(crate) fn fit(
        x: &Matrix,
        y: &[f64],
        class_of: &[usize],
        classes: &[f64],
        rows: Vec<usize>,
        params: &TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> DecisionTree {
        let mut b = Builder {
            x,
            y,
            class_of,
            classes,
            params,
            nodes: Vec::new(),
            scratch: Vec::with_capacity(rows.len()),
        };
        b.grow(rows, 0, rng);
        DecisionTree {
            nodes: b.nodes,
            task: params.task,
        }
    }
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        match self.params.task {
            Task::Regression => rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64,
            Task::Classification => {
                let mut counts = vec![0usize; self.classes.len()];
                for &i in rows {
                    counts[self.class_of[i]] += 1;
                }
                // classes are sorted ascending, so the first maximum is the smallest class
                let mut best = 0;
                for c in 1..counts.len() {
                    if counts[c] > counts[best] {
                        best = c;
                    }
                }
                self.classes[best]
            }
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let pure = rows.iter().all(|&i| self.y[i] == self.y[rows[0]]);
        let splittable = depth < self.params.max_depth
            && rows.len() >= 2 * self.params.min_samples_leaf
            && !pure;
        let split = if splittable { self.best_split(&rows, rng) } else { None };
        let Some(split) = split else {
            self.nodes.push(Node::Leaf {
                value: self.leaf_value(&rows),
                samples: rows.len(),
                depth,
            });
            return id;
        };
        self.nodes.push(Node::Leaf {
            value: 0.0,
            samples: 0,
            depth,
        });
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x.get(i, split.feature) <= split.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            depth,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let p = self.x.cols();
        let features = index::sample(rng, p, self.params.mtry.min(p));
        let min_leaf = self.params.min_samples_leaf;
        let m = rows.len();
        let mut best: Option<BestSplit> = None;
        let k = self.classes.len();
        let mut left_counts = vec![0usize; k];
        let mut total_counts = vec![0usize; k];
        if self.params.task == Task::Classification {
            for &i in rows {
                total_counts[self.class_of[i]] += 1;
            }
        }
        let total_sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let parent_score = match self.params.task {
            Task::Regression => total_sum * total_sum / m as f64,
            Task::Classification => total_counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / m as f64,
        };
        let impurity = match self.params.task {
            Task::Regression => rows.iter().map(|&i| self.y[i] * self.y[i]).sum::<f64>() - parent_score,
            Task::Classification => m as f64 - parent_score,
        };
        let min_gain = 1e-12 * impurity.abs().max(1e-300);

        for f in features.iter() {
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|&i| (self.x.get(i, f), i)));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            left_counts.iter_mut().for_each(|c| *c = 0);
            let mut left_sq = 0.0f64; // sum of squared class counts on the left
            for t in 0..m - 1 {
                let (xv, i) = self.scratch[t];
                match self.params.task {
                    Task::Regression => left_sum += self.y[i],
                    Task::Classification => {
                        let c = self.class_of[i];
                        left_sq += (2 * left_counts[c] + 1) as f64;
                        left_counts[c] += 1;
                    }
                }
                let n_left = t + 1;
                let n_right = m - n_left;
                let next = self.scratch[t + 1].0;
                if n_left < min_leaf || n_right < min_leaf || !(xv < next) {
                    continue;
                }
                let score = match self.params.task {
                    Task::Regression => {
                        let right_sum = total_sum - left_sum;
                        left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64
                    }
                    Task::Classification => {
                        let right_sq: f64 = (0..k)
                            .map(|c| {
                                let r = (total_counts[c] - left_counts[c]) as f64;
                                r * r
                            })
                            .sum();
                        left_sq / n_left as f64 + right_sq / n_right as f64
                    }
                };
                let gain = score - parent_score;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold: 0.5 * (xv + next),
                    });
                }
            }
        }
        best
    }
}

/// Majority class among `votes`; ties go to the smallest class.
pub(crate) fn vote(votes: impl IntoIterator<Item = f64>) -> f64 {
    stats::majority(votes)
}
