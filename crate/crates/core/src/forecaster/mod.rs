//! Patch transformer forecaster with cluster-masked channel attention.
//!
//! Each channel's look-back window is segmented into overlapping patches,
//! linearly embedded, and given a learnable positional encoding. A stack of
//! temporal attention blocks mixes patches within each channel; one shared
//! channel attention block then mixes channels at every patch position,
//! with attention logits masked so information only flows inside a
//! cluster. Channels without a co-clustered partner bypass the channel
//! block entirely. A shared linear head flattens the patch sequence into
//! the `S`-step forecast.

use ndarray::{ArrayD, Axis, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{additive_mask, mask_vector, ClusterState};
use crate::error::{Error, Result};
use crate::nn::{init, scoped, AttentionBlock, Linear, Module};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Epsilon added under the square root of the per-window variance so
/// constant windows normalize to zero instead of dividing by zero.
const INSTANCE_NORM_EPS: f64 = 1e-8;

/// Patching and attention hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    /// Patch length `d_p`.
    pub patch_len: usize,
    /// Step between consecutive patch starts.
    pub stride: usize,
    /// Embedding width of each patch token.
    pub d_model: usize,
    /// Attention heads in every block.
    pub n_heads: usize,
    /// Number of temporal attention blocks.
    pub n_layers: usize,
    /// Dropout probability used inside attention and residual paths.
    pub dropout: f64,
    /// Remove per-window per-channel mean/std before patching and restore
    /// them after the head.
    pub instance_norm: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch_len: 16,
            stride: 8,
            d_model: 128,
            n_heads: 16,
            n_layers: 3,
            dropout: 0.2,
            instance_norm: true,
        }
    }
}

impl PatchConfig {
    /// Number of patches for a window of length `lookback`: no end
    /// padding, so `C = floor((L - d_p) / stride) + 1`.
    pub fn n_patches(&self, lookback: usize) -> Result<usize> {
        if self.patch_len > lookback {
            return Err(Error::PatchTooLong {
                patch_len: self.patch_len,
                lookback,
            });
        }
        if self.stride == 0 {
            return Err(Error::Config("patch stride must be positive".into()));
        }
        Ok((lookback - self.patch_len) / self.stride + 1)
    }
}

/// Per-window normalization state captured before patching.
struct InstanceStats<F: Scalar> {
    mean: Tensor<F>,
    std: Tensor<F>,
}

/// The masked patch-transformer forecaster.
pub struct Forecaster<F: Scalar> {
    embed: Linear<F>,
    pos: Tensor<F>,
    temporal: Vec<AttentionBlock<F>>,
    channel: AttentionBlock<F>,
    head: Linear<F>,
    config: PatchConfig,
    lookback: usize,
    horizon: usize,
    n_patches: usize,
}

impl<F: Scalar> Forecaster<F> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        config: &PatchConfig,
        lookback: usize,
        horizon: usize,
    ) -> Result<Self> {
        let n_patches = config.n_patches(lookback)?;
        if config.d_model % config.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                config.d_model, config.n_heads
            )));
        }
        let embed = Linear::new(rng, config.patch_len, config.d_model, true);
        let pos = Tensor::param(init::uniform(
            rng,
            &[n_patches, config.d_model],
            0.02,
        ));
        let temporal = (0..config.n_layers)
            .map(|_| AttentionBlock::new(rng, config.d_model, config.n_heads, config.dropout))
            .collect();
        let channel = AttentionBlock::new(rng, config.d_model, config.n_heads, config.dropout);
        let head = Linear::new(rng, n_patches * config.d_model, horizon, true);
        Ok(Forecaster {
            embed,
            pos,
            temporal,
            channel,
            head,
            config: config.clone(),
            lookback,
            horizon,
            n_patches,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn config(&self) -> &PatchConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<F>) -> (usize, usize) {
        let shape = x.shape();
        assert_eq!(
            shape.len(),
            3,
            "forecaster input must be [B, N, L], got {shape:?}"
        );
        assert_eq!(
            shape[2], self.lookback,
            "window length {} does not match model lookback {}",
            shape[2], self.lookback
        );
        (shape[0], shape[1])
    }

    /// Removes per-window per-channel statistics. The statistics are
    /// functions of the input data only, so treating them as constants
    /// leaves parameter gradients unchanged.
    fn instance_normalize(&self, x: &Tensor<F>) -> (Tensor<F>, Option<InstanceStats<F>>) {
        if !self.config.instance_norm {
            return (x.clone(), None);
        }
        let v = x.value();
        let (b, n, l) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let mut mean = ArrayD::<F>::zeros(IxDyn(&[b, n, 1]));
        let mut std = ArrayD::<F>::zeros(IxDyn(&[b, n, 1]));
        let lf = F::of_usize(l);
        for bi in 0..b {
            for ni in 0..n {
                let lane = v.index_axis(Axis(0), bi);
                let lane = lane.index_axis(Axis(0), ni);
                let m = lane.sum() / lf;
                let var = lane.iter().map(|&x| (x - m) * (x - m)).sum::<F>() / lf;
                mean[[bi, ni, 0]] = m;
                std[[bi, ni, 0]] = (var + F::of_f64(INSTANCE_NORM_EPS)).sqrt();
            }
        }
        drop(v);
        let stats = InstanceStats {
            mean: Tensor::new(mean),
            std: Tensor::new(std),
        };
        let normalized = x.sub(&stats.mean).div(&stats.std);
        (normalized, Some(stats))
    }

    /// Embeds patches and runs the temporal blocks: `[B, N, L]` to
    /// `[B*N, C, d_model]` token sequences, one sequence per channel.
    fn temporal_trunk(
        &self,
        x: &Tensor<F>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> (Tensor<F>, Option<InstanceStats<F>>, usize, usize) {
        let (b, n) = self.check_input(x);
        let (x, stats) = self.instance_normalize(x);
        let patches = x.unfold_last(self.config.patch_len, self.config.stride);
        let tokens = self
            .embed
            .forward(&patches)
            .add(&self.pos)
            .reshape(&[b * n, self.n_patches, self.config.d_model]);
        let mut z = tokens;
        for block in &self.temporal {
            z = block.forward(&z, None, train, rng);
        }
        (z, stats, b, n)
    }

    /// Shared channel attention at every patch position. Tokens are the
    /// `N` channel vectors of one patch position; positions share weights
    /// and are processed as extra batch entries. Channels whose mask row
    /// permits no partner are blended back to their temporal-only
    /// representation with an exact 0/1 gate.
    fn channel_stage(
        &self,
        z1: &Tensor<F>,
        cluster: &ClusterState,
        b: usize,
        n: usize,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Tensor<F> {
        let d = self.config.d_model;
        let by_position = z1
            .reshape(&[b, n, self.n_patches, d])
            .permute(&[0, 2, 1, 3])
            .reshape(&[b * self.n_patches, n, d]);
        let mask = Tensor::new(additive_mask::<F>(&cluster.mask.view()).into_dyn());
        let attended = self.channel.forward(&by_position, Some(&mask), train, rng);
        let gate_values = mask_vector(&cluster.mask.view());
        let gate = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[n, 1]), |d| {
            F::of_usize(usize::from(gate_values[d[0]]))
        }));
        let keep = Tensor::new(ArrayD::from_shape_fn(IxDyn(&[n, 1]), |d| {
            F::of_usize(usize::from(1 - gate_values[d[0]]))
        }));
        let blended = attended.mul(&gate).add(&by_position.mul(&keep));
        blended
            .reshape(&[b, self.n_patches, n, d])
            .permute(&[0, 2, 1, 3])
            .reshape(&[b * n, self.n_patches, d])
    }

    fn head_stage(
        &self,
        z: &Tensor<F>,
        stats: Option<InstanceStats<F>>,
        b: usize,
        n: usize,
    ) -> Tensor<F> {
        let flat = z.reshape(&[b, n, self.n_patches * self.config.d_model]);
        let y = self.head.forward(&flat);
        match stats {
            Some(s) => y.mul(&s.std).add(&s.mean),
            None => y,
        }
    }

    /// Full forward pass: windows `[B, N, L]` to forecasts `[B, N, S]`.
    ///
    /// When the cluster mask is the identity every channel would bypass
    /// the channel block, so the stage is skipped outright; this makes the
    /// output bit-identical to [`Forecaster::forward_reduced`].
    pub fn forward(
        &self,
        x: &Tensor<F>,
        cluster: &ClusterState,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Tensor<F> {
        let n = x.shape()[1];
        assert_eq!(
            cluster.labels.len(),
            n,
            "cluster state covers {} channels, input has {n}",
            cluster.labels.len()
        );
        if cluster.is_identity() {
            return self.forward_reduced(x, train, rng);
        }
        let (z1, stats, b, n) = self.temporal_trunk(x, train, rng);
        let z2 = self.channel_stage(&z1, cluster, b, n, train, rng);
        self.head_stage(&z2, stats, b, n)
    }

    /// Forward pass with the channel block removed: the channel-independent
    /// configuration against which the identity-mask model must reduce.
    pub fn forward_reduced(&self, x: &Tensor<F>, train: bool, rng: &mut ChaCha8Rng) -> Tensor<F> {
        let (z1, stats, b, n) = self.temporal_trunk(x, train, rng);
        self.head_stage(&z1, stats, b, n)
    }
}

impl<F: Scalar> Module<F> for Forecaster<F> {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.embed.visit_params(&scoped(prefix, "embed"), out);
        out.push((scoped(prefix, "pos"), self.pos.clone()));
        for (i, block) in self.temporal.iter().enumerate() {
            block.visit_params(&scoped(prefix, &format!("temporal.{i}")), out);
        }
        self.channel.visit_params(&scoped(prefix, "channel"), out);
        self.head.visit_params(&scoped(prefix, "head"), out);
    }
}
