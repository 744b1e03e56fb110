use ndarray::{ArrayD, Axis};
use rand_chacha::ChaCha8Rng;

use super::{init, scoped, Module};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Single-layer unidirectional GRU with the standard gate equations:
///
/// ```text
/// r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
pub struct Gru<F: Scalar> {
    pub input_size: usize,
    pub hidden_size: usize,
    w_ir: Tensor<F>,
    w_iz: Tensor<F>,
    w_in: Tensor<F>,
    w_hr: Tensor<F>,
    w_hz: Tensor<F>,
    w_hn: Tensor<F>,
    b_ir: Tensor<F>,
    b_iz: Tensor<F>,
    b_in: Tensor<F>,
    b_hr: Tensor<F>,
    b_hz: Tensor<F>,
    b_hn: Tensor<F>,
}

impl<F: Scalar> Gru<F> {
    pub fn new(rng: &mut ChaCha8Rng, input_size: usize, hidden_size: usize) -> Self {
        let w_i = |rng: &mut ChaCha8Rng| {
            Tensor::param(init::fan_in_uniform(rng, &[input_size, hidden_size], hidden_size))
        };
        let w_h = |rng: &mut ChaCha8Rng| {
            Tensor::param(init::fan_in_uniform(rng, &[hidden_size, hidden_size], hidden_size))
        };
        let b = |rng: &mut ChaCha8Rng| {
            Tensor::param(init::fan_in_uniform(rng, &[hidden_size], hidden_size))
        };
        Gru {
            input_size,
            hidden_size,
            w_ir: w_i(rng),
            w_iz: w_i(rng),
            w_in: w_i(rng),
            w_hr: w_h(rng),
            w_hz: w_h(rng),
            w_hn: w_h(rng),
            b_ir: b(rng),
            b_iz: b(rng),
            b_in: b(rng),
            b_hr: b(rng),
            b_hz: b(rng),
            b_hn: b(rng),
        }
    }

    /// One step: `x` is `[B, input_size]`, `h` is `[B, hidden_size]`.
    pub fn step(&self, x: &Tensor<F>, h: &Tensor<F>) -> Tensor<F> {
        let r = x
            .matmul(&self.w_ir)
            .add(&self.b_ir)
            .add(&h.matmul(&self.w_hr).add(&self.b_hr))
            .sigmoid();
        let z = x
            .matmul(&self.w_iz)
            .add(&self.b_iz)
            .add(&h.matmul(&self.w_hz).add(&self.b_hz))
            .sigmoid();
        let n = x
            .matmul(&self.w_in)
            .add(&self.b_in)
            .add(&r.mul(&h.matmul(&self.w_hn).add(&self.b_hn)))
            .tanh();
        z.neg().add_scalar(1.0).mul(&n).add(&z.mul(h))
    }

    /// Runs the full sequence `[B, T, input_size]` (a constant input, not a
    /// graph node) and returns the final hidden state `[B, hidden_size]`.
    pub fn forward_last(&self, xs: &ArrayD<F>) -> Tensor<F> {
        let shape = xs.shape();
        assert_eq!(shape.len(), 3, "sequence input must be [B, T, I], got {shape:?}");
        assert_eq!(shape[2], self.input_size, "input width mismatch");
        let (b, t) = (shape[0], shape[1]);
        let mut h = Tensor::zeros(&[b, self.hidden_size]);
        for step in 0..t {
            let x_t = Tensor::new(xs.index_axis(Axis(1), step).to_owned().into_dyn());
            h = self.step(&x_t, &h);
        }
        h
    }
}

impl<F: Scalar> Module<F> for Gru<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        for (name, p) in [
            ("w_ir", &self.w_ir),
            ("w_iz", &self.w_iz),
            ("w_in", &self.w_in),
            ("w_hr", &self.w_hr),
            ("w_hz", &self.w_hz),
            ("w_hn", &self.w_hn),
            ("b_ir", &self.b_ir),
            ("b_iz", &self.b_iz),
            ("b_in", &self.b_in),
            ("b_hr", &self.b_hr),
            ("b_hz", &self.b_hz),
            ("b_hn", &self.b_hn),
        ] {
            out.push((scoped(prefix, name), p.clone()));
        }
    }
}
