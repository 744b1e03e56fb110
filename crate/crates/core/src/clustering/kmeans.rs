use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;
const MOVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub labels: Vec<usize>,
    /// `[k, d]`
    pub centers: Array2<f64>,
    /// Sum of squared distances to assigned centers.
    pub inertia: f64,
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a fixed seed.
/// An emptied cluster is re-seeded at the point farthest from its assigned
/// center.
pub fn kmeans(points: &ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KmeansFit> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::NoPoints);
    }
    if k == 0 || k > n {
        return Err(Error::TooManyClusters {
            requested: k,
            channels: n,
        });
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).to_vec()).collect();
    let d = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.random_range(0..n)].to_vec());
    let mut best = vec![f64::INFINITY; n];
    while centers.len() < k {
        let newest = centers.last().unwrap();
        for (i, row) in rows.iter().enumerate() {
            best[i] = best[i].min(sqdist(row, newest));
        }
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in best.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[next].to_vec());
    }

    let mut labels = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        // assignment
        for (i, row) in rows.iter().enumerate() {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dist = sqdist(row, center);
                if dist < best_d {
                    best_d = dist;
                    best_c = c;
                }
            }
            labels[i] = best_c;
        }

        // empty-cluster rescue: plant the center at the worst-served point
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..n)
                    .max_by(|&a, &b| {
                        let da = sqdist(&rows[a], &centers[labels[a]]);
                        let db = sqdist(&rows[b], &centers[labels[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centers[c] = rows[farthest].to_vec();
                counts[labels[farthest]] -= 1;
                labels[farthest] = c;
                counts[c] = 1;
            }
        }

        // update
        let mut movement = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, row) in rows.iter().enumerate() {
                if labels[i] == c {
                    for (m, &v) in mean.iter_mut().zip(row.iter()) {
                        *m += v;
                    }
                }
            }
            for m in &mut mean {
                *m /= counts[c] as f64;
            }
            movement = movement.max(sqdist(&mean, &centers[c]).sqrt());
            centers[c] = mean;
        }
        if movement < MOVE_TOL {
            break;
        }
    }

    // final assignment against converged centers
    let mut inertia = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let mut best_c = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            let dist = sqdist(row, center);
            if dist < best_d {
                best_d = dist;
                best_c = c;
            }
        }
        labels[i] = best_c;
        inertia += best_d;
    }

    let mut flat = Array2::zeros((k, d));
    for (c, center) in centers.iter().enumerate() {
        for (j, &v) in center.iter().enumerate() {
            flat[[c, j]] = v;
        }
    }
    Ok(KmeansFit {
        labels,
        centers: flat,
        inertia,
    })
}
