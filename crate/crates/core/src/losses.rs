//! Training losses: reconstruction, forecast, cluster-distribution
//! divergence, and their weighted combination.
//!
//! Frobenius losses are scaled by `1 / (2 N)` per window, where `N` is the
//! channel count, and averaged over any leading batch axes. The divergence
//! loss is a row-wise KL divergence summed per window and likewise batch
//! averaged.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor applied inside logarithms so vanishing probabilities cannot
/// produce infinities.
pub const LOG_FLOOR: f64 = 1e-12;

fn frobenius_half_mean<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Tensor<F> {
    let shape = pred.shape();
    assert_eq!(shape, target.shape(), "loss inputs must share a shape");
    assert!(shape.len() >= 2, "loss inputs must be [.., N, L]");
    let channels = shape[shape.len() - 2];
    let batch: usize = shape[..shape.len() - 2].iter().product::<usize>().max(1);
    let diff = pred.sub(target);
    diff.mul(&diff)
        .sum_all()
        .scale(1.0 / (2.0 * channels as f64 * batch as f64))
}

/// Reconstruction loss `(1/2N) ||X_tilde - X||_F^2`, averaged over windows.
pub fn loss_rec<F: Scalar>(x: &Tensor<F>, x_tilde: &Tensor<F>) -> Tensor<F> {
    frobenius_half_mean(x_tilde, x)
}

/// Forecast loss `(1/2N) ||Y_hat - Y||_F^2`, averaged over windows.
pub fn loss_pred<F: Scalar>(y_hat: &Tensor<F>, y: &Tensor<F>) -> Tensor<F> {
    frobenius_half_mean(y_hat, y)
}

/// KL divergence `sum_ij p_ij ln(p_ij / g_ij)` per window, averaged over
/// any leading batch axes.
///
/// Both arguments are floored at [`LOG_FLOOR`] inside the logarithms, and
/// `0 * ln 0` contributes zero, so rows containing exact zeros are safe.
/// Gradients flow through both distributions.
pub fn loss_ds<F: Scalar>(p: &Tensor<F>, g: &Tensor<F>) -> Tensor<F> {
    let shape = p.shape();
    assert_eq!(shape, g.shape(), "distributions must share a shape");
    assert!(shape.len() >= 2, "distributions must be [.., N, n]");
    let batch: usize = shape[..shape.len() - 2].iter().product::<usize>().max(1);
    let log_ratio = p.ln_clamped(LOG_FLOOR).sub(&g.ln_clamped(LOG_FLOOR));
    p.mul(&log_ratio).sum_all().scale(1.0 / batch as f64)
}

/// Weighted total `lambda1 * L_DS + lambda2 * L_REC + L_PRED`.
pub fn total_loss<F: Scalar>(
    lambda1: f64,
    lambda2: f64,
    l_ds: &Tensor<F>,
    l_rec: &Tensor<F>,
    l_pred: &Tensor<F>,
) -> Tensor<F> {
    l_ds.scale(lambda1).add(&l_rec.scale(lambda2)).add(l_pred)
}
