//! Small descriptive-statistics helpers shared across modules.

use std::cmp::Ordering;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n-1) variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear interpolation between order statistics: position `(n-1)·p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median_sorted(sorted: &[f64]) -> f64 {
    quantile_sorted(sorted, 0.5)
}

/// Most frequent value; ties go to the smallest value.
pub fn mode(xs: &[f64]) -> f64 {
    let s = sorted(xs);
    let mut best = f64::NAN;
    let mut best_count = 0usize;
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        if j - i > best_count {
            best_count = j - i;
            best = s[i];
        }
        i = j;
    }
    best
}

/// Majority vote over `values`; ties go to the smallest value.
pub fn majority(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    mode(&v)
}

/// Nearest entry of a sorted category list; ties go to the smaller category.
pub fn nearest_category(categories: &[f64], v: f64) -> f64 {
    debug_assert!(!categories.is_empty());
    let mut best = categories[0];
    let mut best_d = (v - best).abs();
    for &c in &categories[1..] {
        let d = (v - c).abs();
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

pub fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}
