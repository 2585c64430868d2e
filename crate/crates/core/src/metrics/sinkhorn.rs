use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::kernel::squared_distance;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once the row-marginal violation (L1 norm) drops below this.
    pub tolerance: f64,
    /// Larger samples are reduced to this many evenly spaced points (sorted
    /// order for one-dimensional samples).
    pub max_points: Option<usize>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 0.1,
            max_iter: 500,
            tolerance: 1e-6,
            max_points: Some(200),
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::Param("sinkhorn epsilon and tolerance must be positive".into()));
        }
        if self.max_points == Some(0) {
            return Err(Error::Param("sinkhorn max_points must be positive".into()));
        }
        Ok(())
    }
}

/// Entropic transport between two uniform empirical measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    /// Dual objective `<f, a> + <g, b>`.
    pub cost: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub marginal_violation: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOutput {
    pub value: f64,
    /// Largest iteration count among the three transport problems.
    pub iterations: usize,
    pub marginal_violation: f64,
    pub converged: bool,
}

fn cost_matrix(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            c.push(squared_distance(a.row(i), b.row(j)));
        }
    }
    c
}

/// `-eps * log sum_j exp(log_w + (pot_j - c_j) / eps)` over a strided view.
#[inline]
fn soft_min(pot: &[f64], cost: impl Fn(usize) -> f64, log_w: f64, eps: f64) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    for (j, &p) in pot.iter().enumerate() {
        hi = hi.max((p - cost(j)) / eps);
    }
    let mut s = 0.0;
    for (j, &p) in pot.iter().enumerate() {
        s += ((p - cost(j)) / eps - hi).exp();
    }
    -eps * (log_w + hi + s.ln())
}

/// Log-domain Sinkhorn on the squared Euclidean cost with uniform weights.
pub fn entropic_transport(a: &Matrix, b: &Matrix, config: &SinkhornConfig) -> Result<TransportSolution> {
    config.validate()?;
    let (n, m) = (a.rows(), b.rows());
    if n == 0 || m == 0 {
        return Err(Error::Param("sinkhorn needs nonempty samples".into()));
    }
    let c = cost_matrix(a, b);
    let eps = config.epsilon;
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
    let f_update = |g: &[f64], f: &mut [f64]| {
        for (i, fi) in f.iter_mut().enumerate() {
            *fi = soft_min(g, |j| c[i * m + j], log_b, eps);
        }
    };
    let g_update = |f: &[f64], g: &mut [f64]| {
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = soft_min(f, |i| c[i * m + j], log_a, eps);
        }
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut f_next = vec![0.0; n];
    f_update(&g, &mut f);
    g_update(&f, &mut g);
    let mut iterations = 1;
    let mut violation;
    loop {
        // Column marginals are exact after the g step; the next f step
        // measures how far the rows are from their marginal.
        f_update(&g, &mut f_next);
        violation = f
            .iter()
            .zip(&f_next)
            .map(|(&fi, &fi_next)| (((fi - fi_next) / eps).exp() - 1.0).abs() / n as f64)
            .sum::<f64>();
        if violation < config.tolerance || iterations >= config.max_iter {
            break;
        }
        std::mem::swap(&mut f, &mut f_next);
        g_update(&f, &mut g);
        iterations += 1;
    }
    let cost = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
    Ok(TransportSolution {
        cost,
        f,
        g,
        iterations,
        marginal_violation: violation,
        converged: violation < config.tolerance,
    })
}

/// Self-transport via the averaged symmetric update, which converges in far
/// fewer steps than the alternating one.
fn self_transport(a: &Matrix, config: &SinkhornConfig) -> TransportSolution {
    let n = a.rows();
    let c = cost_matrix(a, a);
    let eps = config.epsilon;
    let log_w = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut iterations = 0;
    let mut violation;
    loop {
        for (i, ti) in t.iter_mut().enumerate() {
            *ti = soft_min(&f, |j| c[i * n + j], log_w, eps);
        }
        violation = f
            .iter()
            .zip(&t)
            .map(|(&fi, &ti)| (((fi - ti) / eps).exp() - 1.0).abs() / n as f64)
            .sum::<f64>();
        if iterations > 0 && (violation < config.tolerance || iterations >= config.max_iter) {
            break;
        }
        for (fi, &ti) in f.iter_mut().zip(&t) {
            *fi = 0.5 * (*fi + ti);
        }
        iterations += 1;
    }
    let cost = 2.0 * f.iter().sum::<f64>() / n as f64;
    TransportSolution {
        cost,
        g: f.clone(),
        f,
        iterations,
        marginal_violation: violation,
        converged: violation < config.tolerance,
    }
}

/// Transport plan `P_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)`.
pub fn transport_plan(a: &Matrix, b: &Matrix, sol: &TransportSolution, epsilon: f64) -> Matrix {
    let (n, m) = (a.rows(), b.rows());
    let mut p = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let c = squared_distance(a.row(i), b.row(j));
            p.set(i, j, ((sol.f[i] + sol.g[j] - c) / epsilon).exp() / (n * m) as f64);
        }
    }
    p
}

/// Evenly spaced subsample of at most `max` rows; one-dimensional samples
/// are sorted first so the subsample tracks their quantiles.
pub fn reduce_sample(x: &Matrix, max: usize) -> Matrix {
    let n = x.rows();
    if n <= max {
        return x.clone();
    }
    let pick = |k: usize| ((2 * k + 1) * n) / (2 * max);
    if x.cols() == 1 {
        let s = stats::sorted(x.as_slice());
        return Matrix::from_vec(max, 1, (0..max).map(|k| s[pick(k)]).collect());
    }
    let mut out = Matrix::zeros(max, x.cols());
    for k in 0..max {
        out.row_mut(k).copy_from_slice(x.row(pick(k)));
    }
    out
}

fn canonical_order(a: &Matrix, b: &Matrix) -> Ordering {
    a.rows()
        .cmp(&b.rows())
        .then(a.cols().cmp(&b.cols()))
        .then_with(|| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Debiased divergence `OT(a,b) - OT(a,a)/2 - OT(b,b)/2`. Non-convergence
/// is reported through the flag rather than as an error.
pub fn sinkhorn_divergence(a: &Matrix, b: &Matrix, config: &SinkhornConfig) -> Result<SinkhornOutput> {
    config.validate()?;
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Param("sinkhorn needs nonempty samples".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::Param("sinkhorn samples differ in dimension".into()));
    }
    let (a, b) = match config.max_points {
        Some(k) => (reduce_sample(a, k), reduce_sample(b, k)),
        None => (a.clone(), b.clone()),
    };
    let order = canonical_order(&a, &b);
    let (a, b) = if order == Ordering::Greater { (b, a) } else { (a, b) };
    let aa = self_transport(&a, config);
    let (bb, ab) = if order == Ordering::Equal {
        (aa.clone(), aa.clone())
    } else {
        (self_transport(&b, config), entropic_transport(&a, &b, config)?)
    };
    let parts = [&ab, &aa, &bb];
    Ok(SinkhornOutput {
        value: ab.cost - 0.5 * aa.cost - 0.5 * bb.cost,
        iterations: parts.iter().map(|s| s.iterations).max().unwrap_or(0),
        marginal_violation: parts.iter().map(|s| s.marginal_violation).fold(0.0, f64::max),
        converged: parts.iter().all(|s| s.converged),
    })
}
