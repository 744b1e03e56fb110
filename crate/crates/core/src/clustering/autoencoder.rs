//! GRU autoencoder that compresses each channel's look-back window into a
//! low-dimensional latent code used for clustering.
//!
//! Every channel is treated as an independent univariate sequence. The
//! encoder runs a GRU over the window and projects the final hidden state
//! down to the clustering dimension; the decoder expands the code back to
//! an initial hidden state and unrolls a second GRU with zero inputs,
//! reading out one reconstructed value per step.

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{scoped, Gru, Linear, Module};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Recurrent autoencoder over per-channel windows.
pub struct RecurrentAutoencoder<F: Scalar> {
    encoder_gru: Gru<F>,
    enc: Linear<F>,
    dec: Linear<F>,
    decoder_gru: Gru<F>,
    readout: Linear<F>,
    hidden: usize,
    latent: usize,
}

impl<F: Scalar> RecurrentAutoencoder<F> {
    /// Builds an autoencoder with GRU hidden width `hidden` (`l1`) and
    /// latent code width `latent` (`l2`).
    pub fn new(rng: &mut ChaCha8Rng, hidden: usize, latent: usize) -> Self {
        RecurrentAutoencoder {
            encoder_gru: Gru::new(rng, 1, hidden),
            enc: Linear::new(rng, hidden, latent, true),
            dec: Linear::new(rng, latent, hidden, true),
            decoder_gru: Gru::new(rng, 1, hidden),
            readout: Linear::new(rng, hidden, 1, true),
            hidden,
            latent,
        }
    }

    /// GRU hidden width (`l1`).
    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    /// Latent code width (`l2`).
    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    /// Encodes windows of shape `[N, L]` or `[B, N, L]` into hidden states
    /// `H1` (`[.., N, l1]`) and latent codes `H2` (`[.., N, l2]`).
    ///
    /// Each channel row is fed to the GRU as a length-`L` sequence of
    /// scalars; `H1` is the ReLU of the final hidden state and `H2` the
    /// ReLU of its linear projection.
    pub fn encode(&self, windows: &ArrayD<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let shape = windows.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch {
                context: "autoencoder encode".into(),
                expected: "[N, L] or [B, N, L]".into(),
                actual: format!("{shape:?}"),
            });
        }
        let len = *shape.last().unwrap();
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let seq = windows
            .to_shape(IxDyn(&[rows, len, 1]))
            .expect("row-major window reshape")
            .to_owned();
        let h1 = self.encoder_gru.forward_last(&seq).relu();
        let h2 = self.enc.forward(&h1).relu();
        let mut h1_shape = shape.clone();
        *h1_shape.last_mut().unwrap() = self.hidden;
        let mut h2_shape = shape;
        *h2_shape.last_mut().unwrap() = self.latent;
        Ok((h1.reshape(&h1_shape), h2.reshape(&h2_shape)))
    }

    /// Decodes latent codes `[.., l2]` back into windows `[.., len]`.
    ///
    /// The code is lifted to an initial hidden state, a GRU is unrolled for
    /// `len` steps with zero inputs, and a shared linear readout maps each
    /// hidden state to one reconstructed value. The readout is linear so
    /// reconstructions can take either sign.
    pub fn decode(&self, h2: &Tensor<F>, len: usize) -> Result<Tensor<F>> {
        let shape = h2.shape();
        if shape.is_empty() || *shape.last().unwrap() != self.latent {
            return Err(Error::ShapeMismatch {
                context: "autoencoder decode".into(),
                expected: format!("[.., {}]", self.latent),
                actual: format!("{shape:?}"),
            });
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let codes = h2.reshape(&[rows, self.latent]);
        let mut h = self.dec.forward(&codes).relu();
        let zero_input = Tensor::zeros(&[rows, 1]);
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            h = self.decoder_gru.step(&zero_input, &h);
            steps.push(self.readout.forward(&h));
        }
        let flat = Tensor::concat(1, &steps);
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        Ok(flat.reshape(&out_shape))
    }

    /// Encodes and decodes in one pass, returning `(H1, H2, X_tilde)` where
    /// the reconstruction matches the input window shape.
    pub fn reconstruct(&self, windows: &ArrayD<F>) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
        let len = *windows.shape().last().unwrap();
        let (h1, h2) = self.encode(windows)?;
        let x_tilde = self.decode(&h2, len)?;
        Ok((h1, h2, x_tilde))
    }
}

impl<F: Scalar> Module<F> for RecurrentAutoencoder<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.encoder_gru.visit_params(&scoped(prefix, "encoder_gru"), out);
        self.enc.visit_params(&scoped(prefix, "enc"), out);
        self.dec.visit_params(&scoped(prefix, "dec"), out);
        self.decoder_gru.visit_params(&scoped(prefix, "decoder_gru"), out);
        self.readout.visit_params(&scoped(prefix, "readout"), out);
    }
}
