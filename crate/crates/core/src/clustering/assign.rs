//! Soft cluster assignments and the sharpened target distribution.
//!
//! Channels are assigned to clusters with a Student-t kernel over the
//! distance between their latent codes and a set of learnable centers.
//! The target distribution squares and renormalizes those assignments so
//! that confident rows become sharper while large clusters are discounted
//! by their total soft mass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Computes soft assignment probabilities `Q` from latent codes and centers.
///
/// `h2` has shape `[..., N, D]` (any number of leading batch axes) and
/// `centers` has shape `[n, D]`. The result has shape `[..., N, n]` with
/// `q_ij = (1 + ||h_i - mu_j||^2 / t)^{-(t+1)/2}` normalized so each row
/// sums to 1. The kernel is strictly positive, so no row can degenerate.
///
/// `t` is the Student-t degrees-of-freedom parameter and must be positive.
pub fn soft_assignment<F: Scalar>(h2: &Tensor<F>, centers: &Tensor<F>, t: f64) -> Tensor<F> {
    assert!(t > 0.0, "degrees of freedom must be positive, got {t}");
    let kernel = h2
        .pairwise_sqdist(centers)
        .scale(1.0 / t)
        .add_scalar(1.0)
        .powf_const(-(t + 1.0) / 2.0);
    let axis = kernel.shape().len() - 1;
    let norm = kernel.sum_axis_keep(axis);
    kernel.div(&norm)
}

/// Sharpens soft assignments `Q` into the target distribution `P`.
///
/// With `f_j = sum_i q_ij` taken over the channel axis (the second-to-last
/// axis, so batched inputs get per-window frequencies), the target is
/// `p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j')`. Rows of `P` sum to 1.
///
/// Returns [`Error::DegenerateCluster`] if any cluster has zero total mass,
/// which signals that a center has collapsed and must be re-initialized.
/// The output stays connected to the autodiff graph, so gradients flow
/// through both arguments of any divergence computed against `P`.
pub fn target_distribution<F: Scalar>(q: &Tensor<F>) -> Result<Tensor<F>> {
    let shape = q.shape();
    assert!(
        shape.len() >= 2,
        "assignments must have at least 2 axes, got {shape:?}"
    );
    let channel_axis = shape.len() - 2;
    let freq = q.sum_axis_keep(channel_axis);
    {
        let f = freq.value();
        let n_clusters = *shape.last().unwrap();
        for (idx, &v) in f.iter().enumerate() {
            if v <= F::zero() {
                return Err(Error::DegenerateCluster {
                    cluster: idx % n_clusters,
                });
            }
        }
    }
    let weighted = q.powf_const(2.0).div(&freq);
    let axis = shape.len() - 1;
    let norm = weighted.sum_axis_keep(axis);
    Ok(weighted.div(&norm))
}
