use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

use super::{linear::Linear, scoped, Module};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;

pub struct LayerNorm<F: Scalar> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::param(ArrayD::from_elem(IxDyn(&[dim]), F::one())),
            beta: Tensor::param(ArrayD::zeros(IxDyn(&[dim]))),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.layer_norm(&self.gamma, &self.beta, LAYER_NORM_EPS)
    }
}

impl<F: Scalar> Module<F> for LayerNorm<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((scoped(prefix, "gamma"), self.gamma.clone()));
        out.push((scoped(prefix, "beta"), self.beta.clone()));
    }
}

/// Scaled dot-product multi-head self-attention. An optional additive mask
/// (broadcast over batch and heads) is applied to the logits before softmax.
pub struct MultiHeadAttention<F: Scalar> {
    wq: Linear<F>,
    wk: Linear<F>,
    wv: Linear<F>,
    wo: Linear<F>,
    n_heads: usize,
    head_dim: usize,
    dropout: f64,
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new(rng: &mut ChaCha8Rng, d_model: usize, n_heads: usize, dropout: f64) -> Self {
        assert!(
            d_model % n_heads == 0,
            "d_model {d_model} not divisible by n_heads {n_heads}"
        );
        MultiHeadAttention {
            wq: Linear::new(rng, d_model, d_model, true),
            wk: Linear::new(rng, d_model, d_model, true),
            wv: Linear::new(rng, d_model, d_model, true),
            wo: Linear::new(rng, d_model, d_model, true),
            n_heads,
            head_dim: d_model / n_heads,
            dropout,
        }
    }

    /// `x` is `[B, T, d_model]`; `mask` (if any) is an additive `[T, T]`
    /// constant with 0 for permitted and a large negative for forbidden
    /// positions.
    pub fn forward(
        &self,
        x: &Tensor<F>,
        mask: Option<&Tensor<F>>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Tensor<F> {
        let shape = x.shape();
        let (b, t) = (shape[0], shape[1]);
        let (h, dh) = (self.n_heads, self.head_dim);
        let split = |y: Tensor<F>| y.reshape(&[b, t, h, dh]).permute(&[0, 2, 1, 3]);
        let q = split(self.wq.forward(x));
        let k = split(self.wk.forward(x));
        let v = split(self.wv.forward(x));
        let mut scores = q.bmm_nt(&k).scale(1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            scores = scores.add(m);
        }
        let mut attn = scores.softmax_last();
        if train {
            attn = attn.dropout(self.dropout, rng);
        }
        let out = attn.bmm(&v).permute(&[0, 2, 1, 3]).reshape(&[b, t, h * dh]);
        self.wo.forward(&out)
    }
}

impl<F: Scalar> Module<F> for MultiHeadAttention<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.wq.visit_params(&scoped(prefix, "wq"), out);
        self.wk.visit_params(&scoped(prefix, "wk"), out);
        self.wv.visit_params(&scoped(prefix, "wv"), out);
        self.wo.visit_params(&scoped(prefix, "wo"), out);
    }
}

/// Two-layer position-wise feed-forward with ReLU, hidden width `2 * d_model`.
pub struct FeedForward<F: Scalar> {
    lin1: Linear<F>,
    lin2: Linear<F>,
    dropout: f64,
}

impl<F: Scalar> FeedForward<F> {
    pub fn new(rng: &mut ChaCha8Rng, d_model: usize, dropout: f64) -> Self {
        FeedForward {
            lin1: Linear::new(rng, d_model, 2 * d_model, true),
            lin2: Linear::new(rng, 2 * d_model, d_model, true),
            dropout,
        }
    }

    pub fn forward(&self, x: &Tensor<F>, train: bool, rng: &mut ChaCha8Rng) -> Tensor<F> {
        let mut h = self.lin1.forward(x).relu();
        if train {
            h = h.dropout(self.dropout, rng);
        }
        self.lin2.forward(&h)
    }
}

impl<F: Scalar> Module<F> for FeedForward<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.lin1.visit_params(&scoped(prefix, "lin1"), out);
        self.lin2.visit_params(&scoped(prefix, "lin2"), out);
    }
}

/// Post-norm residual encoder block:
/// `y = LN(x + MSA(x))`, `out = LN(y + FF(y))`.
pub struct AttentionBlock<F: Scalar> {
    pub attn: MultiHeadAttention<F>,
    pub ff: FeedForward<F>,
    norm1: LayerNorm<F>,
    norm2: LayerNorm<F>,
    dropout: f64,
}

impl<F: Scalar> AttentionBlock<F> {
    pub fn new(rng: &mut ChaCha8Rng, d_model: usize, n_heads: usize, dropout: f64) -> Self {
        AttentionBlock {
            attn: MultiHeadAttention::new(rng, d_model, n_heads, dropout),
            ff: FeedForward::new(rng, d_model, dropout),
            norm1: LayerNorm::new(d_model),
            norm2: LayerNorm::new(d_model),
            dropout,
        }
    }

    pub fn forward(
        &self,
        x: &Tensor<F>,
        mask: Option<&Tensor<F>>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Tensor<F> {
        let mut a = self.attn.forward(x, mask, train, rng);
        if train {
            a = a.dropout(self.dropout, rng);
        }
        let y = self.norm1.forward(&x.add(&a));
        let mut f = self.ff.forward(&y, train, rng);
        if train {
            f = f.dropout(self.dropout, rng);
        }
        self.norm2.forward(&y.add(&f))
    }
}

impl<F: Scalar> Module<F> for AttentionBlock<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.attn.visit_params(&scoped(prefix, "attn"), out);
        self.ff.visit_params(&scoped(prefix, "ff"), out);
        self.norm1.visit_params(&scoped(prefix, "norm1"), out);
        self.norm2.visit_params(&scoped(prefix, "norm2"), out);
    }
}
