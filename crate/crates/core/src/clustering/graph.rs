//! Correlation graph construction and the graph-convolutional clusterer.
//!
//! Channels become nodes of an undirected graph whose edges connect pairs
//! with high absolute Pearson correlation on the training split. A stack of
//! three graph convolutions over the symmetrically normalized adjacency
//! produces a per-channel cluster distribution; the first two layers can be
//! fused with the autoencoder's representations so both views are trained
//! jointly.

use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::pearson_matrix;
use crate::nn::{scoped, Linear, Module};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Builds the binary channel graph from training-split values `[T, N]`.
///
/// `adj[i, j] = 1` iff `i != j` and `|pearson(x_i, x_j)| >= threshold`.
/// Constant channels correlate with nothing (their coefficient is defined
/// as 0), so they end up isolated. Requires at least two time steps and a
/// threshold strictly inside `(0, 1)`.
pub fn build_graph<F: Scalar>(values: &ArrayView2<'_, F>, threshold: f64) -> Result<Array2<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "correlation threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if values.nrows() < 2 {
        return Err(Error::Config(format!(
            "graph construction needs at least 2 time steps, got {}",
            values.nrows()
        )));
    }
    let corr = pearson_matrix(values);
    let n = corr.nrows();
    let mut adj = Array2::<u8>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j && corr[[i, j]].abs() >= threshold {
                adj[[i, j]] = 1;
            }
        }
    }
    Ok(adj)
}

/// Symmetrically normalized adjacency with self-loops.
///
/// Returns `D^{-1/2} (A + I) D^{-1/2}` where `D` is the diagonal degree
/// matrix of `A + I`. Self-loops guarantee every degree is at least 1, so
/// the operator is always well defined; with `A = 0` it is exactly the
/// identity matrix.
pub fn normalized_adjacency<F: Scalar>(adj: &Array2<u8>) -> Array2<F> {
    let n = adj.nrows();
    assert_eq!(adj.ncols(), n, "adjacency must be square");
    let mut tilde = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            tilde[[i, j]] = if i == j { 1.0 } else { f64::from(adj[[i, j]]) };
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| tilde.row(i).sum().sqrt().recip())
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        F::of_f64(inv_sqrt_deg[i] * tilde[[i, j]] * inv_sqrt_deg[j])
    })
}

/// Three-layer graph convolutional network producing per-channel cluster
/// distributions, with optional fusion of autoencoder representations.
pub struct GraphClusterer<F: Scalar> {
    w0: Linear<F>,
    w1: Linear<F>,
    w2: Linear<F>,
    epsilon: f64,
    adj_norm: Array2<F>,
    latent: usize,
    n_clusters: usize,
}

impl<F: Scalar> GraphClusterer<F> {
    /// Builds the network. `lookback` is the window length fed to layer 0,
    /// `hidden`/`latent` are the fusion widths (`l1`/`l2`), `n_clusters`
    /// sizes the output layer, and `epsilon` in `[0, 1]` weights the
    /// autoencoder branch during fusion.
    pub fn new(
        rng: &mut ChaCha8Rng,
        lookback: usize,
        hidden: usize,
        latent: usize,
        n_clusters: usize,
        epsilon: f64,
        adj_norm: Array2<F>,
    ) -> Self {
        assert!(
            (0.0..=1.0).contains(&epsilon),
            "fusion coefficient must lie in [0, 1], got {epsilon}"
        );
        assert!(n_clusters >= 1, "need at least one cluster");
        GraphClusterer {
            w0: Linear::new(rng, lookback, hidden, false),
            w1: Linear::new(rng, hidden, latent, false),
            w2: Linear::new(rng, latent, n_clusters, false),
            epsilon,
            adj_norm,
            latent,
            n_clusters,
        }
    }

    /// Number of output clusters.
    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Re-initializes the output layer for a new cluster count. Used when
    /// the adaptive cluster-count selection changes `n` mid-training; the
    /// optimizer state for the old layer must be dropped by the caller.
    pub fn replace_output_layer(&mut self, rng: &mut ChaCha8Rng, n_clusters: usize) {
        assert!(n_clusters >= 1, "need at least one cluster");
        self.w2 = Linear::new(rng, self.latent, n_clusters, false);
        self.n_clusters = n_clusters;
    }

    fn propagate(&self, x: &Tensor<F>) -> Tensor<F> {
        x.left_mul_const(&self.adj_norm)
    }

    fn fuse(&self, graph: &Tensor<F>, auto: Option<&Tensor<F>>) -> Tensor<F> {
        match auto {
            Some(h) => graph
                .scale(1.0 - self.epsilon)
                .add(&h.scale(self.epsilon)),
            None => graph.clone(),
        }
    }

    /// Runs the three-layer forward pass on windows `x` of shape
    /// `[.., N, L]`, fusing `h1` (`[.., N, l1]`) after layer 0 and `h2`
    /// (`[.., N, l2]`) after layer 1 when provided. Returns row-stochastic
    /// cluster distributions of shape `[.., N, n]`.
    ///
    /// `h1` is optional so a variant without the autoencoder can still run
    /// the graph branch; passing `None` skips that fusion step.
    pub fn forward(
        &self,
        x: &Tensor<F>,
        h1: Option<&Tensor<F>>,
        h2: Option<&Tensor<F>>,
    ) -> Tensor<F> {
        let g1 = self.w0.forward(&self.propagate(x)).relu();
        let g1 = self.fuse(&g1, h1);
        let g2 = self.w1.forward(&self.propagate(&g1)).relu();
        let g2 = self.fuse(&g2, h2);
        let logits = self.w2.forward(&self.propagate(&g2));
        logits.softmax_last()
    }
}

impl<F: Scalar> Module<F> for GraphClusterer<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.w0.visit_params(&scoped(prefix, "w0"), out);
        self.w1.visit_params(&scoped(prefix, "w1"), out);
        self.w2.visit_params(&scoped(prefix, "w2"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_gradient_error;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, ArrayD, IxDyn};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_channels_form_complete_graph() {
        let col: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).sin()).collect();
        let values = Array2::from_shape_fn((50, 4), |(t, _)| col[t]);
        let adj = build_graph(&values.view(), 0.6).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(adj[[i, j]], u8::from(i != j));
            }
        }
    }

    #[test]
    fn independent_noise_stays_disconnected() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let normal = Normal::new(0.0f64, 1.0).unwrap();
        let values = Array2::from_shape_fn((2000, 5), |_| normal.sample(&mut rng));
        let adj = build_graph(&values.view(), 0.6).unwrap();
        assert_eq!(adj.sum(), 0);
    }

    #[test]
    fn anti_correlated_channels_connect() {
        let values = Array2::from_shape_fn((64, 2), |(t, j)| {
            let v = (t as f64 * 0.2).sin();
            if j == 0 {
                v
            } else {
                -v
            }
        });
        let adj = build_graph(&values.view(), 0.6).unwrap();
        assert_eq!(adj[[0, 1]], 1);
        assert_eq!(adj[[1, 0]], 1);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let values = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert!(build_graph(&values.view(), 0.0).is_err());
        assert!(build_graph(&values.view(), 1.0).is_err());
        assert!(build_graph(&values.view(), 1.5).is_err());
        let short = arr2(&[[1.0, 2.0]]);
        assert!(build_graph(&short.view(), 0.6).is_err());
    }

    #[test]
    fn empty_graph_normalizes_to_exact_identity() {
        let adj = Array2::<u8>::zeros((5, 5));
        let norm: Array2<f64> = normalized_adjacency(&adj);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(norm[[i, j]], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn pair_graph_normalizes_to_half_matrix() {
        let adj = arr2(&[[0u8, 1], [1, 0]]);
        let norm: Array2<f64> = normalized_adjacency(&adj);
        for v in norm.iter() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-12);
        }
    }

    fn clusterer(seed: u64, n: usize, adj: Array2<u8>) -> GraphClusterer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GraphClusterer::new(&mut rng, 8, 4, 3, n, 0.5, normalized_adjacency(&adj))
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let adj = arr2(&[[0u8, 1, 0], [1, 0, 0], [0, 0, 0]]);
        let gcl = clusterer(1, 2, adj);
        let x = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[4, 3, 8]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let h1 = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[4, 3, 4]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let h2 = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[4, 3, 3]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let g = gcl.forward(&x, Some(&h1), Some(&h2));
        assert_eq!(g.shape(), vec![4, 3, 2]);
        for row in g.value().rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn isolated_identical_nodes_get_identical_rows() {
        let adj = Array2::<u8>::zeros((3, 3));
        let gcl = clusterer(2, 2, adj);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let row: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[3, 8]), |d| row[d[1]]));
        let hrow: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h1 = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[3, 4]), |d| hrow[d[1]]));
        let crow: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h2 = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[3, 3]), |d| crow[d[1]]));
        let g = gcl.forward(&x, Some(&h1), Some(&h2));
        let v = g.value();
        for i in 1..3 {
            for j in 0..2 {
                assert_eq!(v[[i, j]], v[[0, j]]);
            }
        }
    }

    #[test]
    fn skipping_first_fusion_changes_only_that_stage() {
        let adj = arr2(&[[0u8, 1], [1, 0]]);
        let gcl = clusterer(4, 2, adj);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[2, 8]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let h2 = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[2, 3]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let without = gcl.forward(&x, None, Some(&h2));
        assert_eq!(without.shape(), vec![2, 2]);
        for row in without.value().rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn replace_output_layer_resizes_distribution() {
        let adj = Array2::<u8>::zeros((4, 4));
        let mut gcl = clusterer(6, 2, adj);
        let x = Tensor::<f64>::zeros(&[4, 8]);
        assert_eq!(gcl.forward(&x, None, None).shape(), vec![4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        gcl.replace_output_layer(&mut rng, 3);
        assert_eq!(gcl.n_clusters(), 3);
        assert_eq!(gcl.forward(&x, None, None).shape(), vec![4, 3]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let adj = arr2(&[[0u8, 1, 1], [1, 0, 0], [1, 0, 0]]);
        let gcl = clusterer(7, 2, adj);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[3, 8]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let h1 = Tensor::<f64>::param(ArrayD::from_shape_fn(IxDyn(&[3, 4]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let h2 = Tensor::<f64>::param(ArrayD::from_shape_fn(IxDyn(&[3, 3]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let weights = ArrayD::from_shape_fn(IxDyn(&[3, 2]), |_| rng.random_range(-1.0..1.0));
        let mut params: Vec<Tensor<f64>> = gcl.params().into_iter().map(|(_, p)| p).collect();
        params.push(h1.clone());
        params.push(h2.clone());
        let err = max_gradient_error(
            &params,
            || {
                gcl.forward(&x, Some(&h1), Some(&h2))
                    .mul(&Tensor::new(weights.clone()))
                    .sum_all()
            },
            1e-5,
        );
        assert!(err < 1e-6, "gradient error too large: {err}");
    }
}
