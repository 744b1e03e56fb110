//! Dynamic-time-warping channel clustering, used as an ablation baseline.
//!
//! Pairwise DTW distances between channels are computed with the classical
//! dynamic-programming recurrence (squared point cost, symmetric steps)
//! restricted to a Sakoe-Chiba band, over a capped suffix of the training
//! split to bound the quadratic cost. Channels are then grouped by
//! average-linkage agglomerative clustering.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default Sakoe-Chiba band radius.
pub const DTW_BAND: usize = 50;
/// Default cap on the number of trailing time steps entering the DTW cost.
pub const DTW_CAP: usize = 1000;

/// DTW distance between two series with squared point cost.
///
/// The warping path is restricted to `|i - j| <= band`, widened when
/// necessary so series of different lengths stay reachable. The returned
/// value is the accumulated squared cost along the optimal path, so
/// `dtw_distance(x, x, band) == 0` for any `x`.
pub fn dtw_distance(a: &[f64], b: &[f64], band: usize) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    let band = band.max(n.abs_diff(m));
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        curr.fill(f64::INFINITY);
        let lo = i.saturating_sub(band).max(1);
        let hi = (i + band).min(m);
        for j in lo..=hi {
            let cost = (a[i - 1] - b[j - 1]).powi(2);
            let best = prev[j - 1].min(prev[j]).min(curr[j - 1]);
            curr[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// Pairwise DTW distances between the channels of `values` (`[T, N]`).
///
/// Only the last `min(T, cap)` steps enter the computation. The result is
/// symmetric with a zero diagonal.
pub fn dtw_distance_matrix<F: Scalar>(
    values: &ArrayView2<'_, F>,
    band: usize,
    cap: usize,
) -> Array2<f64> {
    let (t, n) = (values.nrows(), values.ncols());
    let start = t.saturating_sub(cap);
    let channels: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            values
                .column(j)
                .iter()
                .skip(start)
                .map(|v| v.as_f64())
                .collect()
        })
        .collect();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dtw_distance(&channels[i], &channels[j], band);
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    dist
}

/// Cuts a precomputed distance matrix into `n_clusters` groups by
/// average-linkage agglomerative clustering.
///
/// Merges always pick the currently closest pair; ties resolve to the pair
/// with the smallest indices, so the procedure is deterministic. Output
/// labels are renumbered so cluster ids appear in order of each cluster's
/// smallest member index.
pub fn agglomerative_labels(dist: &ArrayView2<'_, f64>, n_clusters: usize) -> Vec<usize> {
    let n = dist.nrows();
    assert_eq!(dist.ncols(), n, "distance matrix must be square");
    assert!(n_clusters >= 1 && n_clusters <= n, "invalid cluster count");
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut work = dist.to_owned();
    let mut active: Vec<usize> = (0..n).collect();
    while active.len() > n_clusters {
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                if work[[i, j]] < best_d {
                    best_d = work[[i, j]];
                    best = (i, j);
                }
            }
        }
        let (i, j) = best;
        let size_i = members[i].as_ref().unwrap().len() as f64;
        let size_j = members[j].as_ref().unwrap().len() as f64;
        for &k in &active {
            if k != i && k != j {
                let merged =
                    (size_i * work[[i, k]] + size_j * work[[j, k]]) / (size_i + size_j);
                work[[i, k]] = merged;
                work[[k, i]] = merged;
            }
        }
        let absorbed = members[j].take().unwrap();
        members[i].as_mut().unwrap().extend(absorbed);
        active.retain(|&k| k != j);
    }
    let mut clusters: Vec<Vec<usize>> = active
        .into_iter()
        .map(|i| members[i].take().unwrap())
        .collect();
    clusters.sort_by_key(|c| c.iter().copied().min().unwrap());
    let mut labels = vec![0usize; n];
    for (id, cluster) in clusters.iter().enumerate() {
        for &i in cluster {
            labels[i] = id;
        }
    }
    labels
}

/// Clusters channels of training-split values `[T, N]` into `n_clusters`
/// groups using DTW distances with the default band and step cap.
pub fn dtw_cluster<F: Scalar>(
    values: &ArrayView2<'_, F>,
    n_clusters: usize,
) -> Result<Vec<usize>> {
    let n = values.ncols();
    if n_clusters > n {
        return Err(Error::TooManyClusters {
            requested: n_clusters,
            channels: n,
        });
    }
    if n_clusters == 0 {
        return Err(Error::Config("cluster count must be positive".into()));
    }
    let dist = dtw_distance_matrix(values, DTW_BAND, DTW_CAP);
    Ok(agglomerative_labels(&dist.view(), n_clusters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
    use crate::metrics::adjusted_rand_index;
    use ndarray::arr2;

    #[test]
    fn self_distance_is_zero() {
        let x: Vec<f64> = (0..120).map(|t| (t as f64 * 0.17).sin() * 2.0).collect();
        assert_eq!(dtw_distance(&x, &x, 50), 0.0);
    }

    #[test]
    fn warping_beats_euclidean_on_shifted_sinusoid() {
        let x: Vec<f64> = (0..200).map(|t| (t as f64 * 0.1).sin()).collect();
        let shifted: Vec<f64> = (0..200).map(|t| ((t + 10) as f64 * 0.1).sin()).collect();
        let euclid: f64 = x
            .iter()
            .zip(&shifted)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let dtw = dtw_distance(&x, &shifted, 50);
        assert!(
            dtw < euclid,
            "expected warping to reduce cost: dtw={dtw}, euclidean={euclid}"
        );
    }

    #[test]
    fn different_lengths_stay_reachable() {
        let a: Vec<f64> = (0..80).map(|t| t as f64).collect();
        let b: Vec<f64> = (0..200).map(|t| t as f64 * 0.4).collect();
        let d = dtw_distance(&a, &b, 3);
        assert!(d.is_finite());
    }

    #[test]
    fn distance_matrix_is_symmetric_with_zero_diagonal() {
        let values = arr2(&[
            [0.0, 1.0, 2.0],
            [1.0, 0.5, 1.5],
            [0.5, 1.2, 2.2],
            [0.2, 0.8, 1.9],
        ]);
        let dist = dtw_distance_matrix(&values.view(), 2, 1000);
        for i in 0..3 {
            assert_eq!(dist[[i, i]], 0.0);
            for j in 0..3 {
                assert_eq!(dist[[i, j]], dist[[j, i]]);
            }
        }
    }

    #[test]
    fn cap_keeps_only_trailing_steps() {
        let long = Array2::from_shape_fn((500, 2), |(t, j)| {
            if t < 400 {
                // Early disagreement that the cap must discard.
                if j == 0 {
                    100.0
                } else {
                    -100.0
                }
            } else {
                (t as f64 * 0.05).sin()
            }
        });
        let capped = dtw_distance_matrix(&long.view(), 10, 100);
        let tail = long.slice(ndarray::s![400.., ..]).to_owned();
        let direct = dtw_distance_matrix(&tail.view(), 10, 1000);
        assert_eq!(capped[[0, 1]], direct[[0, 1]]);
        assert_eq!(capped[[0, 1]], 0.0);
    }

    #[test]
    fn average_linkage_groups_line_points() {
        let pts = [0.0f64, 0.1, 5.0, 5.1];
        let dist = Array2::from_shape_fn((4, 4), |(i, j)| (pts[i] - pts[j]).abs());
        let labels = agglomerative_labels(&dist.view(), 2);
        assert_eq!(labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn labels_are_renumbered_by_smallest_member() {
        // Channels 1 and 3 pair up, 0 and 2 pair up; cluster containing
        // channel 0 must get label 0.
        let dist = arr2(&[
            [0.0, 9.0, 1.0, 9.0],
            [9.0, 0.0, 9.0, 1.0],
            [1.0, 9.0, 0.0, 9.0],
            [9.0, 1.0, 9.0, 0.0],
        ]);
        let labels = agglomerative_labels(&dist.view(), 2);
        assert_eq!(labels, vec![0, 1, 0, 1]);
    }

    #[test]
    fn recovers_planted_groups_on_clean_data() {
        let spec = SyntheticSpec {
            n_channels: 8,
            n_groups: 2,
            steps: 400,
            seed: 11,
            noise_std: 0.0,
            groups: None,
        };
        let (series, truth) = generate_synthetic::<f64>(&spec).unwrap();
        let labels = dtw_cluster(&series.values.view(), 2).unwrap();
        assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);
    }

    #[test]
    fn degenerate_cluster_counts() {
        let values = arr2(&[[0.0, 1.0, 2.0], [0.1, 1.1, 2.1], [0.0, 0.9, 2.2]]);
        let all = dtw_cluster(&values.view(), 3).unwrap();
        assert_eq!(all.len(), 3);
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 3, "n = N must give singletons");
        let one = dtw_cluster(&values.view(), 1).unwrap();
        assert!(one.iter().all(|&l| l == 0));
        assert!(dtw_cluster(&values.view(), 4).is_err());
        assert!(dtw_cluster(&values.view(), 0).is_err());
    }
}
