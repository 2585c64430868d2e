use crate::matrix::Matrix;
use crate::stats;

/// Points as rows of a single-column matrix.
pub fn column_points(values: &[f64]) -> Matrix {
    Matrix::from_vec(values.len(), 1, values.to_vec())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median Euclidean distance over all distinct pairs of the pooled sample;
/// 1.0 when that median is zero or there is a single point.
pub fn median_heuristic(a: &Matrix, b: &Matrix) -> f64 {
    let pooled: Vec<&[f64]> = (0..a.rows()).map(|i| a.row(i)).chain((0..b.rows()).map(|i| b.row(i))).collect();
    let n = pooled.len();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(squared_distance(pooled[i], pooled[j]).sqrt());
        }
    }
    let m = dists.len();
    let (lower, &mut hi, _) = dists.select_nth_unstable_by(m / 2, stats::cmp_f64);
    let median = if m % 2 == 1 {
        hi
    } else {
        0.5 * (lower.iter().copied().fold(f64::NEG_INFINITY, f64::max) + hi)
    };
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

fn mean_kernel(a: &Matrix, b: &Matrix, gamma: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.rows() {
        let x = a.row(i);
        for j in 0..b.rows() {
            sum += (-gamma * squared_distance(x, b.row(j))).exp();
        }
    }
    sum / (a.rows() * b.rows()) as f64
}

/// Biased (V-statistic) squared MMD with the RBF kernel
/// `exp(-|x - y|^2 / (2 h^2))`, `h` from [`median_heuristic`].
pub fn mmd(a: &Matrix, b: &Matrix) -> f64 {
    let h = median_heuristic(a, b);
    mmd_with_bandwidth(a, b, h)
}

pub fn mmd_with_bandwidth(a: &Matrix, b: &Matrix, bandwidth: f64) -> f64 {
    assert!(a.rows() > 0 && b.rows() > 0, "mmd needs nonempty samples");
    assert_eq!(a.cols(), b.cols());
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let kxx = mean_kernel(a, a, gamma);
    let kyy = mean_kernel(b, b, gamma);
    let kxy = mean_kernel(a, b, gamma);
    (kxx + kyy - 2.0 * kxy).max(0.0)
}

pub fn mmd_1d(a: &[f64], b: &[f64]) -> f64 {
    mmd(&column_points(a), &column_points(b))
}
