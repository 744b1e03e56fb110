//! Neural-network building blocks on top of [`Tensor`](crate::Tensor):
//! parameter initialization, linear and GRU layers, residual attention
//! blocks, and the Adam optimizer.

pub mod adam;
pub mod attention;
pub mod gru;
pub mod init;
pub mod linear;

pub use adam::Adam;
pub use attention::{AttentionBlock, FeedForward, LayerNorm, MultiHeadAttention};
pub use gru::Gru;
pub use linear::Linear;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything holding trainable tensors, exposed under stable hierarchical
/// names for the optimizer and for checkpoints.
pub trait Module<F: Scalar> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>);

    fn params(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut out);
        out
    }
}

pub(crate) fn scoped(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
