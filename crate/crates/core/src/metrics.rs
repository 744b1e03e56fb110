//! Evaluation metrics: forecast error, channel correlation, and clustering
//! quality scores. All computation is in `f64` regardless of model precision.

use ndarray::{Array2, ArrayView2, ArrayViewD};

use crate::scalar::Scalar;

/// Mean squared error over all elements.
pub fn mse<F: Scalar>(pred: &ArrayViewD<'_, F>, target: &ArrayViewD<'_, F>) -> f64 {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// Mean absolute error over all elements.
pub fn mae<F: Scalar>(pred: &ArrayViewD<'_, F>, target: &ArrayViewD<'_, F>) -> f64 {
    assert_eq!(pred.shape(), target.shape(), "mae shape mismatch");
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).abs())
        .sum::<f64>()
        / n
}

/// Pearson correlation between all channel pairs of a `[T, N]` series.
/// A constant channel correlates 0 with everything; the diagonal is 1.
pub fn pearson_matrix<F: Scalar>(values: &ArrayView2<'_, F>) -> Array2<f64> {
    let (t, n) = (values.nrows(), values.ncols());
    let tf = t.max(1) as f64;
    let means: Vec<f64> = (0..n)
        .map(|j| values.column(j).iter().map(|v| v.as_f64()).sum::<f64>() / tf)
        .collect();
    let stds: Vec<f64> = (0..n)
        .map(|j| {
            let m = means[j];
            (values
                .column(j)
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>()
                / tf)
                .sqrt()
        })
        .collect();
    let mut corr = Array2::zeros((n, n));
    for i in 0..n {
        corr[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let c = if stds[i] == 0.0 || stds[j] == 0.0 {
                0.0
            } else {
                let cov = values
                    .column(i)
                    .iter()
                    .zip(values.column(j).iter())
                    .map(|(a, b)| (a.as_f64() - means[i]) * (b.as_f64() - means[j]))
                    .sum::<f64>()
                    / tf;
                cov / (stds[i] * stds[j])
            };
            corr[[i, j]] = c;
            corr[[j, i]] = c;
        }
    }
    corr
}

/// Mean silhouette score from a precomputed symmetric distance matrix.
///
/// One cluster overall scores -1 (so cluster-count selection never picks it
/// against a real alternative); singleton clusters contribute 0.
pub fn silhouette_from_distances(dist: &ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    assert_eq!(dist.nrows(), n, "distance matrix size mismatch");
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return -1.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue; // contributes 0
        }
        let mut sums = vec![0.0f64; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist[[i, j]];
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Mean silhouette of points `[N, d]` under Euclidean distance.
pub fn silhouette_euclidean(points: &ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let n = points.nrows();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    silhouette_from_distances(&dist.view(), labels)
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "label slices differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().copied().max().unwrap_or(0) + 1;
    let kb = b.iter().copied().max().unwrap_or(0) + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b.iter()) {
        table[x][y] += 1;
    }
    let choose2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let expected = sum_a * sum_b / choose2(n as u64);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        return if sum_ij == expected { 1.0 } else { 0.0 };
    }
    (sum_ij - expected) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, Array1};

    #[test]
    fn mse_and_mae_on_known_residuals() {
        let p = Array1::from_vec(vec![1.0f64, 2.0, 3.0]).into_dyn();
        let t = Array1::from_vec(vec![0.0f64, 0.0, 0.0]).into_dyn();
        assert_abs_diff_eq!(mse(&p.view(), &t.view()), 14.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mae(&p.view(), &t.view()), 2.0, epsilon = 1e-12);
        assert_eq!(mse(&t.view(), &t.view()), 0.0);
    }

    #[test]
    fn mae_squared_never_exceeds_mse() {
        let p = Array1::from_vec(vec![0.5f64, -1.5, 2.0, 0.0]).into_dyn();
        let t = Array1::from_vec(vec![0.0f64, 0.0, 0.0, 1.0]).into_dyn();
        let m = mse(&p.view(), &t.view());
        let a = mae(&p.view(), &t.view());
        assert!(a * a <= m + 1e-12);
    }

    #[test]
    fn pearson_of_identical_and_opposite_channels() {
        let x: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).sin()).collect();
        let mut values = Array2::zeros((50, 3));
        for t in 0..50 {
            values[[t, 0]] = x[t];
            values[[t, 1]] = x[t];
            values[[t, 2]] = -2.0 * x[t] + 1.0;
        }
        let c = pearson_matrix(&values.view());
        assert_abs_diff_eq!(c[[0, 1]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[[0, 2]], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[[2, 2]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_channel_correlates_zero() {
        let mut values = Array2::zeros((20, 2));
        for t in 0..20 {
            values[[t, 0]] = t as f64;
            values[[t, 1]] = 5.0;
        }
        let c = pearson_matrix(&values.view());
        assert_eq!(c[[0, 1]], 0.0);
    }

    #[test]
    fn silhouette_prefers_true_split_of_blobs() {
        let points = arr2(&[
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [10.0, 10.0],
            [10.1, 10.0],
            [10.0, 10.1],
        ]);
        let good = silhouette_euclidean(&points.view(), &[0, 0, 0, 1, 1, 1]);
        let bad = silhouette_euclidean(&points.view(), &[0, 1, 0, 1, 0, 1]);
        assert!(good > 0.9, "good split scored {good}");
        assert!(good > bad);
    }

    #[test]
    fn single_cluster_scores_minus_one() {
        let points = arr2(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(silhouette_euclidean(&points.view(), &[0, 0, 0]), -1.0);
    }

    #[test]
    fn ari_basics() {
        assert_abs_diff_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 0]),
            0.0,
            epsilon = 1e-12
        );
        let partial = adjusted_rand_index(&[0, 0, 1, 1, 2, 2], &[0, 0, 1, 2, 2, 2]);
        assert!(partial > 0.0 && partial < 1.0, "got {partial}");
    }

    #[test]
    fn ari_known_value() {
        // contingency [[2,0],[1,3]]: sum_ij=4, sum_a=C(2,2)+C(4,2)=7,
        // sum_b=C(3,2)+C(3,2)=6, C(6,2)=15, expected=2.8, max=6.5
        let value = adjusted_rand_index(&[0, 0, 1, 1, 1, 1], &[0, 0, 0, 1, 1, 1]);
        assert_abs_diff_eq!(value, 1.2 / 3.7, epsilon = 1e-12);
    }
}
