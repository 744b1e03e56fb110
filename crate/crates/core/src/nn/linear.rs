use rand_chacha::ChaCha8Rng;

use super::{init, scoped, Module};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map over the last axis. The weight is stored `[in_dim, out_dim]`
/// so the forward pass contracts without a transpose.
pub struct Linear<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = Tensor::param(init::fan_in_uniform(rng, &[in_dim, out_dim], in_dim));
        let bias = bias.then(|| Tensor::param(init::fan_in_uniform(rng, &[out_dim], in_dim)));
        Linear { weight, bias }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let y = x.matmul(&self.weight);
        match &self.bias {
            Some(b) => y.add(b),
            None => y,
        }
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((scoped(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((scoped(prefix, "bias"), b.clone()));
        }
    }
}
