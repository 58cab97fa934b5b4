//! Small dense-vector helpers shared across modules.
//!
//! Model parameters and gradients are flat `Vec<f64>` throughout the crate;
//! these are the handful of kernels everything is built from. Heavier dense
//! factorizations (Cholesky, eigen decompositions) use `nalgebra` at the
//! call sites that need them.

/// Inner product. Lengths must match.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Max-abs entry.
pub fn linf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

/// Sign with an exact zero for zero input, unlike `f64::signum` which maps
/// `+0.0` to `1.0`. Ascent steps use this so a flat coordinate stays put.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Largest absolute coordinate-wise difference.
pub fn linf_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |m, (&x, &y)| m.max((x - y).abs()))
}

/// `x += alpha * y` in place.
pub fn add_scaled(x: &mut [f64], y: &[f64], alpha: f64) {
    debug_assert_eq!(x.len(), y.len());
    for (xi, yi) in x.iter_mut().zip(y) {
        *xi += alpha * yi;
    }
}

/// Cosine similarity; 0.0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Pearson correlation coefficient; 0.0 when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sxy += (x - ma) * (y - mb);
        sxx += (x - ma) * (x - ma);
        syy += (y - mb) * (y - mb);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Median of a non-empty slice (averaging the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median of non-finite values"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Fractional ranks (1-based, ties get the average rank).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson of fractional ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    pearson(&ranks(a), &ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dot_and_norms() {
        assert_abs_diff_eq!(dot(&[1.0, 2.0], &[3.0, -1.0]), 1.0);
        assert_abs_diff_eq!(norm2(&[3.0, 4.0]), 5.0);
        assert_abs_diff_eq!(linf_dist(&[0.0, 1.0], &[0.5, -1.0]), 2.0);
    }

    #[test]
    fn cosine_handles_zero_vectors() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert_abs_diff_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]), 1.0);
    }

    #[test]
    fn pearson_of_affine_map_is_one() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x - 7.0).collect();
        assert_abs_diff_eq!(pearson(&a, &b), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn slope_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -0.5 * x + 2.0).collect();
        assert_abs_diff_eq!(least_squares_slope(&xs, &ys), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_abs_diff_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_abs_diff_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn spearman_sees_monotone_not_linear() {
        let a: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b: Vec<f64> = a.iter().map(|x| x.exp()).collect();
        assert_abs_diff_eq!(spearman(&a, &b), 1.0, epsilon = 1e-12);
        let rev: Vec<f64> = a.iter().rev().cloned().collect();
        assert_abs_diff_eq!(spearman(&a, &rev), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn spearman_averages_tied_ranks() {
        // [1, 1, 2] vs [5, 5, 9]: identical tie structure, perfect correlation.
        assert_abs_diff_eq!(
            spearman(&[1.0, 1.0, 2.0], &[5.0, 5.0, 9.0]),
            1.0,
            epsilon = 1e-12
        );
    }
}
