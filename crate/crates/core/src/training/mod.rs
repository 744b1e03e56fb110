//! Joint training of the clustering stage and the masked forecaster.
//!
//! A run proceeds in three phases. First the recurrent autoencoder is
//! pretrained on reconstruction alone. Then the main loop minimizes the
//! weighted sum of the self-supervised clustering divergence, the
//! reconstruction loss and the forecast loss, rebuilding the channel mask
//! once per refresh interval from codes of a fixed reference window set.
//! Finally the forecaster parameters that achieved the best validation
//! forecast loss are restored and scored on the test split.

mod checkpoint;
mod report;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader, CheckpointMeta,
    CheckpointMetrics, ParamSpec,
};
pub use report::{append_metrics_csv, EpochRecord, RunReport};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayD, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    agglomerative_labels, build_graph, dtw_distance_matrix, kmeans, normalized_adjacency,
    soft_assignment, target_distribution, ClusterState, GraphClusterer, KmeansFit,
    RecurrentAutoencoder, DTW_BAND, DTW_CAP,
};
use crate::data::{make_windows, MultivariateSeries, WindowBatch};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, PatchConfig};
use crate::losses::{loss_ds, loss_pred, loss_rec, total_loss};
use crate::metrics::{silhouette_euclidean, silhouette_from_distances};
use crate::nn::{Adam, Linear, Module};
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};

/// Which model variant to train. Each variant removes one ingredient so its
/// contribution can be measured against the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Autoencoder, graph branch and clustering divergence all active.
    Full,
    /// Drops the graph branch and the clustering divergence; the mask still
    /// comes from k-means on autoencoder codes.
    NoGcl,
    /// Replaces the autoencoder with a linear projection of raw windows;
    /// drops the reconstruction loss.
    NoRfl,
    /// Freezes the mask to an agglomerative clustering of warping distances
    /// computed before training; trains on the forecast loss alone.
    DtwCluster,
    /// Identity mask, so every channel attends only to itself.
    CiOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoGcl,
        Ablation::NoRfl,
        Ablation::DtwCluster,
        Ablation::CiOnly,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGcl => "no_gcl",
            Ablation::NoRfl => "no_rfl",
            Ablation::DtwCluster => "dtw_cluster",
            Ablation::CiOnly => "ci_only",
        }
    }

    /// Whether this variant re-clusters codes during training. The other
    /// variants fix the mask before the first epoch.
    pub fn adaptive(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoGcl | Ablation::NoRfl)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.token() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation {s:?}, expected one of full, no_gcl, no_rfl, dtw_cluster, ci_only"
                ))
            })
    }
}

/// Optimization settings shared by every run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the clustering divergence in the total loss.
    pub lambda1: f64,
    /// Weight of the reconstruction loss in the total loss.
    pub lambda2: f64,
    /// Learning rate for the joint phase.
    pub lr: f64,
    /// Learning rate for autoencoder pretraining.
    pub pretrain_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub pretrain_epochs: usize,
    /// Stop when this many epochs pass without a validation improvement.
    pub patience: usize,
    pub seed: u64,
    /// Cluster counts tried by the silhouette selection.
    pub cluster_counts: Vec<usize>,
    /// Re-cluster the reference codes every this many epochs.
    pub cluster_refresh: usize,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.1,
            lambda2: 1.0,
            lr: 1e-4,
            pretrain_lr: 1e-3,
            batch_size: 128,
            max_epochs: 100,
            pretrain_epochs: 30,
            patience: 20,
            seed: 0,
            cluster_counts: vec![2, 3, 4],
            cluster_refresh: 1,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return fail(format!(
                "loss weights must be non-negative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            ));
        }
        if !(self.lr > 0.0) || !(self.pretrain_lr > 0.0) {
            return fail(format!(
                "learning rates must be positive, got lr={} pretrain_lr={}",
                self.lr, self.pretrain_lr
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return fail(format!(
                "patience must be in 1..=max_epochs, got {} with max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if self.cluster_refresh == 0 {
            return fail("cluster_refresh must be at least 1".into());
        }
        if self.ablation != Ablation::CiOnly {
            if self.cluster_counts.is_empty() {
                return fail("cluster_counts must be non-empty".into());
            }
            if self.cluster_counts.contains(&0) {
                return fail("cluster counts must be at least 1".into());
            }
        }
        Ok(())
    }
}

/// Architecture of the clustering stage: autoencoder widths, the soft
/// assignment temperature and the fusion coefficient of the graph branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RflConfig {
    /// GRU hidden width, also the first fusion width.
    pub hidden: usize,
    /// Code width, also the second fusion width.
    pub latent: usize,
    /// Student-t degrees of freedom in the soft assignment.
    pub t: f64,
    /// Weight of the autoencoder branch when fusing into the graph branch.
    pub epsilon: f64,
}

impl Default for RflConfig {
    fn default() -> Self {
        RflConfig {
            hidden: 32,
            latent: 10,
            t: 1.0,
            epsilon: 0.5,
        }
    }
}

impl RflConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config(format!(
                "autoencoder widths must be at least 1, got hidden={} latent={}",
                self.hidden, self.latent
            )));
        }
        if !(self.t > 0.0) {
            return Err(Error::Config(format!(
                "soft assignment temperature must be positive, got {}",
                self.t
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "fusion coefficient must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Everything a training run needs. The series must already be normalized;
/// losses and reported errors are in normalized units.
#[derive(Debug)]
pub struct TrainSetup<'a, F: Scalar> {
    pub series: &'a MultivariateSeries<F>,
    pub dataset_name: String,
    /// Hash of the effective experiment configuration, echoed into reports
    /// and checkpoints so artifacts can be traced back to their settings.
    pub config_hash: String,
    pub lookback: usize,
    pub horizon: usize,
    pub patch: PatchConfig,
    pub rfl: RflConfig,
    pub train: TrainConfig,
    /// Absolute correlation threshold for the channel graph.
    pub graph_threshold: f64,
}

/// Result of a completed run: the report plus the restored best model.
pub struct TrainOutcome<F: Scalar> {
    pub report: RunReport,
    pub forecaster: Forecaster<F>,
    pub cluster: ClusterState,
}

/// One pretraining epoch: mean reconstruction loss over the train windows
/// and over the validation windows.
#[derive(Debug, Clone, Copy)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub train_rec: f64,
    pub val_rec: f64,
}

/// Picks the candidate cluster count with the highest mean silhouette of a
/// k-means fit on `points` (one row per channel). A lone cluster scores -1
/// so it is only chosen when nothing else is offered; ties go to the
/// smaller count. Returns the winning count with its fit.
pub fn select_cluster_count(
    points: &ArrayView2<'_, f64>,
    candidates: &[usize],
    seed: u64,
) -> Result<(usize, KmeansFit)> {
    let mut counts = candidates.to_vec();
    counts.sort_unstable();
    counts.dedup();
    if counts.is_empty() {
        return Err(Error::Config("cluster_counts must be non-empty".into()));
    }
    let mut best: Option<(f64, usize, KmeansFit)> = None;
    for &n in &counts {
        let fit = kmeans(points, n, seed)?;
        let score = if n == 1 {
            -1.0
        } else {
            silhouette_euclidean(points, &fit.labels)
        };
        // Strict comparison on an ascending candidate list keeps the
        // smallest count on ties.
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, n, fit));
        }
    }
    let (_, n, fit) = best.expect("candidate list is non-empty");
    Ok((n, fit))
}

/// Silhouette selection over precomputed distances, used where Euclidean
/// geometry on codes does not apply: the warping-distance ablation and
/// checkpoint-free cluster inspection.
pub fn select_cluster_count_from_distances(
    dist: &ArrayView2<'_, f64>,
    candidates: &[usize],
) -> Result<(usize, Vec<usize>)> {
    let mut counts = candidates.to_vec();
    counts.sort_unstable();
    counts.dedup();
    if counts.is_empty() {
        return Err(Error::Config("cluster_counts must be non-empty".into()));
    }
    let channels = dist.nrows();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for &n in &counts {
        if n == 0 || n > channels {
            return Err(Error::TooManyClusters {
                requested: n,
                channels,
            });
        }
        let labels = agglomerative_labels(dist, n);
        let score = if n == 1 {
            -1.0
        } else {
            silhouette_from_distances(dist, &labels)
        };
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, n, labels));
        }
    }
    let (_, n, labels) = best.expect("candidate list is non-empty");
    Ok((n, labels))
}

/// Trains the autoencoder on reconstruction alone and returns the per-epoch
/// loss trace. `epochs == 0` is a no-op that returns an empty trace.
pub fn pretrain_rfl<F: Scalar>(
    autoencoder: &RecurrentAutoencoder<F>,
    train_windows: &WindowBatch<F>,
    val_windows: &WindowBatch<F>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PretrainRecord>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let params = autoencoder.params();
    let mut adam = Adam::new(lr);
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        order.shuffle(rng);
        let mut sum = 0.0;
        for (batch, chunk) in order.chunks(batch_size).enumerate() {
            let b = train_windows.gather(chunk);
            let x_arr = b.inputs.into_dyn();
            let x = Tensor::new(x_arr.clone());
            let (_, _, x_tilde) = autoencoder.reconstruct(&x_arr)?;
            let loss = loss_rec(&x, &x_tilde);
            let v = loss.item().as_f64();
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam.zero_grad(&params);
            loss.backward();
            adam.step(&params);
            sum += v * chunk.len() as f64;
        }
        trace.push(PretrainRecord {
            epoch,
            train_rec: sum / train_windows.len().max(1) as f64,
            val_rec: reconstruction_loss(autoencoder, val_windows, batch_size)?,
        });
    }
    Ok(trace)
}

/// Mean reconstruction loss over `windows` without building gradients.
pub fn reconstruction_loss<F: Scalar>(
    autoencoder: &RecurrentAutoencoder<F>,
    windows: &WindowBatch<F>,
    batch_size: usize,
) -> Result<f64> {
    no_grad(|| {
        let indices: Vec<usize> = (0..windows.len()).collect();
        let mut sum = 0.0;
        for chunk in indices.chunks(batch_size.max(1)) {
            let b = windows.gather(chunk);
            let x_arr = b.inputs.into_dyn();
            let x = Tensor::new(x_arr.clone());
            let (_, _, x_tilde) = autoencoder.reconstruct(&x_arr)?;
            sum += loss_rec(&x, &x_tilde).item().as_f64() * chunk.len() as f64;
        }
        Ok(sum / windows.len().max(1) as f64)
    })
}

/// Mean forecast loss over `windows` without dropout or gradients.
pub fn forecast_loss<F: Scalar>(
    forecaster: &Forecaster<F>,
    cluster: &ClusterState,
    windows: &WindowBatch<F>,
    batch_size: usize,
) -> f64 {
    no_grad(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let indices: Vec<usize> = (0..windows.len()).collect();
        let mut sum = 0.0;
        for chunk in indices.chunks(batch_size.max(1)) {
            let b = windows.gather(chunk);
            let x = Tensor::new(b.inputs.into_dyn());
            let y = Tensor::new(b.targets.into_dyn());
            let y_hat = forecaster.forward(&x, cluster, false, &mut rng);
            sum += loss_pred(&y_hat, &y).item().as_f64() * chunk.len() as f64;
        }
        sum / windows.len().max(1) as f64
    })
}

/// Mean squared and mean absolute forecast error over all elements of
/// `windows`, in the normalized units of the inputs.
pub fn evaluate<F: Scalar>(
    forecaster: &Forecaster<F>,
    cluster: &ClusterState,
    windows: &WindowBatch<F>,
    batch_size: usize,
) -> (f64, f64) {
    no_grad(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let indices: Vec<usize> = (0..windows.len()).collect();
        let (mut sq, mut abs, mut count) = (0.0, 0.0, 0usize);
        for chunk in indices.chunks(batch_size.max(1)) {
            let b = windows.gather(chunk);
            let x = Tensor::new(b.inputs.into_dyn());
            let y_hat = forecaster.forward(&x, cluster, false, &mut rng);
            let pred = y_hat.value();
            for (p, t) in pred.iter().zip(b.targets.iter()) {
                let d = p.as_f64() - t.as_f64();
                sq += d * d;
                abs += d.abs();
            }
            count += b.targets.len();
        }
        (sq / count.max(1) as f64, abs / count.max(1) as f64)
    })
}

/// The clustering-side models of one run. Fields are populated according to
/// the ablation; `None` means the corresponding term is absent from the
/// loss and the forward pass.
struct ClusterEngine<F: Scalar> {
    autoencoder: Option<RecurrentAutoencoder<F>>,
    /// Stand-in encoder when the autoencoder is ablated: a linear map from
    /// raw windows to codes, trained end to end without an activation.
    proj: Option<Linear<F>>,
    gcl: Option<GraphClusterer<F>>,
    /// Cluster centers of the soft assignment, a trainable parameter.
    centers: Option<Tensor<F>>,
    t: f64,
}

impl<F: Scalar> ClusterEngine<F> {
    /// Returns `(h1, h2, reconstruction loss)` for a batch, each present
    /// only when the corresponding model exists.
    #[allow(clippy::type_complexity)]
    fn batch_terms(
        &self,
        x_arr: &ArrayD<F>,
        x: &Tensor<F>,
    ) -> Result<(Option<Tensor<F>>, Option<Tensor<F>>, Option<Tensor<F>>)> {
        if let Some(ae) = &self.autoencoder {
            let (h1, h2, x_tilde) = ae.reconstruct(x_arr)?;
            let rec = loss_rec(x, &x_tilde);
            return Ok((Some(h1), Some(h2), Some(rec)));
        }
        if let Some(proj) = &self.proj {
            return Ok((None, Some(proj.forward(x)), None));
        }
        Ok((None, None, None))
    }

    /// Per-channel codes of the reference windows as plain `f64` rows:
    /// encode every window, then average codes over windows.
    fn reference_points(&self, reference: &ArrayD<F>) -> Result<Array2<f64>> {
        no_grad(|| {
            let h2 = if let Some(ae) = &self.autoencoder {
                ae.encode(reference)?.1
            } else if let Some(proj) = &self.proj {
                proj.forward(&Tensor::new(reference.clone()))
            } else {
                unreachable!("reference codes requested without an encoder")
            };
            let value = h2.value();
            let view = value
                .view()
                .into_dimensionality::<ndarray::Ix3>()
                .expect("reference codes have shape [windows, channels, latent]");
            let mean = view.mean_axis(Axis(0)).expect("at least one window");
            Ok(mean.mapv(Scalar::as_f64))
        })
    }
}

fn named_params<F: Scalar>(
    engine: &ClusterEngine<F>,
    forecaster: &Forecaster<F>,
) -> Vec<(String, Tensor<F>)> {
    let mut out = Vec::new();
    if let Some(ae) = &engine.autoencoder {
        ae.visit_params("rfl", &mut out);
    }
    if let Some(proj) = &engine.proj {
        proj.visit_params("proj", &mut out);
    }
    if let Some(gcl) = &engine.gcl {
        gcl.visit_params("gcl", &mut out);
    }
    if let Some(centers) = &engine.centers {
        out.push(("centers".to_string(), centers.clone()));
    }
    forecaster.visit_params("forecaster", &mut out);
    out
}

fn centers_param<F: Scalar>(centers: &Array2<f64>) -> Tensor<F> {
    Tensor::param(centers.mapv(F::of_f64).into_dyn())
}

/// Runs one full training job and returns the report together with the
/// model restored to its best validation state.
///
/// The clustering mask is rebuilt every `cluster_refresh` epochs from the
/// codes of a fixed reference set (the first `batch_size` train windows):
/// the silhouette selection picks the cluster count, k-means provides the
/// labels. When the count changes, the graph output layer and the centers
/// are re-initialized and their optimizer state is dropped; otherwise the
/// centers keep training by gradient. Early stopping halts the loop once
/// `patience` epochs pass without a new best validation forecast loss.
pub fn train<F: Scalar>(setup: &TrainSetup<'_, F>) -> Result<TrainOutcome<F>> {
    let cfg = &setup.train;
    cfg.validate()?;
    setup.rfl.validate()?;
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let train_w = make_windows(&setup.series.train(), "train", setup.lookback, setup.horizon)?;
    let val_w = make_windows(&setup.series.val(), "val", setup.lookback, setup.horizon)?;
    let test_w = make_windows(&setup.series.test(), "test", setup.lookback, setup.horizon)?;
    let n_channels = setup.series.channels();

    let ablation = cfg.ablation;
    let mut engine = ClusterEngine::<F> {
        autoencoder: None,
        proj: None,
        gcl: None,
        centers: None,
        t: setup.rfl.t,
    };

    if matches!(ablation, Ablation::Full | Ablation::NoGcl) {
        let ae = RecurrentAutoencoder::new(&mut rng, setup.rfl.hidden, setup.rfl.latent);
        pretrain_rfl(
            &ae,
            &train_w,
            &val_w,
            cfg.pretrain_epochs,
            cfg.pretrain_lr,
            cfg.batch_size,
            &mut rng,
        )?;
        engine.autoencoder = Some(ae);
    }
    if ablation == Ablation::NoRfl {
        engine.proj = Some(Linear::new(&mut rng, setup.lookback, setup.rfl.latent, true));
    }

    // Codes of these windows decide the mask for the whole run; keeping the
    // set fixed makes refreshes comparable across epochs.
    let reference = train_w.head(cfg.batch_size);
    let reference_inputs = reference.inputs.into_dyn();

    let mut cluster = match ablation {
        Ablation::CiOnly => ClusterState::identity(n_channels),
        Ablation::DtwCluster => {
            let dist = dtw_distance_matrix(&setup.series.train(), DTW_BAND, DTW_CAP);
            let (_, labels) = select_cluster_count_from_distances(&dist.view(), &cfg.cluster_counts)?;
            ClusterState::from_labels(labels)
        }
        _ => {
            let points = engine.reference_points(&reference_inputs)?;
            let (n, fit) = select_cluster_count(&points.view(), &cfg.cluster_counts, rng.random())?;
            if matches!(ablation, Ablation::Full | Ablation::NoRfl) {
                let adj = build_graph(&setup.series.train(), setup.graph_threshold)?;
                engine.gcl = Some(GraphClusterer::new(
                    &mut rng,
                    setup.lookback,
                    setup.rfl.hidden,
                    setup.rfl.latent,
                    n,
                    setup.rfl.epsilon,
                    normalized_adjacency(&adj),
                ));
                engine.centers = Some(centers_param(&fit.centers));
            }
            ClusterState::from_labels(fit.labels)
        }
    };

    let forecaster = Forecaster::new(&mut rng, &setup.patch, setup.lookback, setup.horizon)?;
    let mut adam = Adam::new(cfg.lr);
    let mut params = named_params(&engine, &forecaster);

    let snapshot = |f: &Forecaster<F>| -> Vec<ArrayD<F>> {
        f.params().iter().map(|(_, p)| p.value().clone()).collect()
    };
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = snapshot(&forecaster);
    let mut best_cluster = cluster.clone();
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut history: Vec<usize> = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        if ablation.adaptive() && (epoch - 1) % cfg.cluster_refresh == 0 {
            let points = engine.reference_points(&reference_inputs)?;
            let (n, fit) = select_cluster_count(&points.view(), &cfg.cluster_counts, rng.random())?;
            if let Some(gcl) = engine.gcl.as_mut() {
                if gcl.n_clusters() != n {
                    gcl.replace_output_layer(&mut rng, n);
                    adam.forget_prefix("gcl.w2");
                }
            }
            if let Some(centers) = &engine.centers {
                if centers.shape()[0] != n {
                    engine.centers = Some(centers_param(&fit.centers));
                    adam.forget_prefix("centers");
                }
            }
            params = named_params(&engine, &forecaster);
            cluster = ClusterState::from_labels(fit.labels);
        }

        let mut order: Vec<usize> = (0..train_w.len()).collect();
        order.shuffle(&mut rng);
        let (mut rec_sum, mut ds_sum, mut pred_sum, mut total_sum) = (0.0, 0.0, 0.0, 0.0);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let b = train_w.gather(chunk);
            let w = chunk.len() as f64;
            let x_arr = b.inputs.into_dyn();
            let x = Tensor::new(x_arr.clone());
            let y = Tensor::new(b.targets.into_dyn());

            let (h1, h2, l_rec) = engine.batch_terms(&x_arr, &x)?;
            let l_ds = match (&engine.gcl, &engine.centers, &h2) {
                (Some(gcl), Some(centers), Some(h2)) => {
                    let q = soft_assignment(h2, centers, engine.t);
                    let p = match target_distribution(&q) {
                        Ok(p) => p,
                        // An empty cluster starves the target distribution.
                        // Re-seed the centers from the reference codes once
                        // and retry; a second failure is a real error.
                        Err(Error::DegenerateCluster { .. }) => {
                            let points = engine.reference_points(&reference_inputs)?;
                            let fit = kmeans(&points.view(), centers.shape()[0], rng.random())?;
                            centers.set_value(fit.centers.mapv(F::of_f64).into_dyn());
                            adam.forget_prefix("centers");
                            let q = soft_assignment(h2, centers, engine.t);
                            target_distribution(&q)?
                        }
                        Err(other) => return Err(other),
                    };
                    let g = gcl.forward(&x, h1.as_ref(), Some(h2));
                    Some(loss_ds(&p, &g))
                }
                _ => None,
            };

            let y_hat = forecaster.forward(&x, &cluster, true, &mut rng);
            let l_pred = loss_pred(&y_hat, &y);
            let zero = Tensor::scalar(F::zero());
            let total = total_loss(
                cfg.lambda1,
                cfg.lambda2,
                l_ds.as_ref().unwrap_or(&zero),
                l_rec.as_ref().unwrap_or(&zero),
                &l_pred,
            );
            let total_v = total.item().as_f64();
            if !total_v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam.zero_grad(&params);
            total.backward();
            adam.step(&params);

            rec_sum += l_rec.map_or(0.0, |t| t.item().as_f64()) * w;
            ds_sum += l_ds.map_or(0.0, |t| t.item().as_f64()) * w;
            pred_sum += l_pred.item().as_f64() * w;
            total_sum += total_v * w;
        }

        let denom = train_w.len().max(1) as f64;
        let val_pred = forecast_loss(&forecaster, &cluster, &val_w, cfg.batch_size);
        epochs.push(EpochRecord {
            epoch,
            train_rec: rec_sum / denom,
            train_ds: ds_sum / denom,
            train_pred: pred_sum / denom,
            train_total: total_sum / denom,
            val_pred,
            n_clusters: cluster.n,
            identity_mask: cluster.is_identity(),
        });
        history.push(cluster.n);

        if val_pred < best_val {
            best_val = val_pred;
            best_epoch = epoch;
            best_params = snapshot(&forecaster);
            best_cluster = cluster.clone();
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    for ((_, param), saved) in forecaster.params().iter().zip(best_params) {
        param.set_value(saved);
    }
    let cluster = best_cluster;
    let (test_mse, test_mae) = evaluate(&forecaster, &cluster, &test_w, cfg.batch_size);

    let identity_every = epochs.iter().all(|e| e.identity_mask);
    let report = RunReport {
        dataset: setup.dataset_name.clone(),
        horizon: setup.horizon,
        ablation: ablation.to_string(),
        seed: cfg.seed,
        config_hash: setup.config_hash.clone(),
        epochs,
        best_epoch,
        best_val_pred: best_val,
        test_mse,
        test_mae,
        cluster_count_history: history,
        identity_mask_every_epoch: identity_every,
        final_cluster: cluster.export(setup.graph_threshold),
        wall_clock_s: clock.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        report,
        forecaster,
        cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
    use crate::data::SplitSpec;
    use ndarray::Array3;
    use rand_distr::{Distribution, Normal};

    fn blob_points() -> Array2<f64> {
        let mut pts = Array2::zeros((8, 3));
        for i in 0..4 {
            for d in 0..3 {
                pts[[i, d]] = 0.05 * (i as f64 + d as f64);
                pts[[i + 4, d]] = 10.0 + 0.05 * (i as f64 - d as f64);
            }
        }
        pts
    }

    fn tiny_series(seed: u64) -> MultivariateSeries<f64> {
        let spec = SyntheticSpec {
            n_channels: 6,
            n_groups: 2,
            steps: 240,
            seed,
            noise_std: 0.1,
            groups: None,
        };
        let (series, _) = generate_synthetic::<f64>(&spec).unwrap();
        let mut series = series
            .with_split(&SplitSpec::Ratios {
                train: 0.6,
                val: 0.2,
            })
            .unwrap();
        series.normalize();
        series
    }

    fn tiny_setup(train: TrainConfig) -> (MultivariateSeries<f64>, PatchConfig, RflConfig) {
        let series = tiny_series(7);
        let patch = PatchConfig {
            patch_len: 8,
            stride: 8,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            dropout: 0.0,
            instance_norm: true,
        };
        let rfl = RflConfig {
            hidden: 8,
            latent: 3,
            ..RflConfig::default()
        };
        let _ = train;
        (series, patch, rfl)
    }

    fn run_tiny(train: TrainConfig) -> RunReport {
        let (series, patch, rfl) = tiny_setup(train.clone());
        let setup = TrainSetup {
            series: &series,
            dataset_name: "synthetic".to_string(),
            config_hash: "test".to_string(),
            lookback: 24,
            horizon: 8,
            patch,
            rfl,
            train,
            graph_threshold: 0.6,
        };
        train_outcome(&setup).report
    }

    fn train_outcome(setup: &TrainSetup<'_, f64>) -> TrainOutcome<f64> {
        train(setup).expect("training run should succeed")
    }

    fn tiny_train_config(ablation: Ablation, max_epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            pretrain_lr: 1e-2,
            batch_size: 32,
            max_epochs,
            pretrain_epochs: 2,
            patience: max_epochs,
            seed: 11,
            cluster_counts: vec![2, 3],
            ablation,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn default_config_matches_documented_values() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lambda1, 0.1);
        assert_eq!(cfg.lambda2, 1.0);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.pretrain_lr, 1e-3);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.max_epochs, 100);
        assert_eq!(cfg.pretrain_epochs, 30);
        assert_eq!(cfg.patience, 20);
        assert_eq!(cfg.cluster_counts, vec![2, 3, 4]);
        assert_eq!(cfg.cluster_refresh, 1);
        assert_eq!(cfg.ablation, Ablation::Full);
        assert!(cfg.validate().is_ok());

        let parsed: TrainConfig = toml::from_str("ablation = \"no_gcl\"\nseed = 3").unwrap();
        assert_eq!(parsed.ablation, Ablation::NoGcl);
        assert_eq!(parsed.seed, 3);
        assert_eq!(parsed.batch_size, 128);
        assert!(toml::from_str::<TrainConfig>("no_such_field = 1").is_err());
    }

    #[test]
    fn validate_rejects_bad_settings() {
        let ok = TrainConfig::default();
        for bad in [
            TrainConfig { lambda1: -0.1, ..ok.clone() },
            TrainConfig { lr: 0.0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { max_epochs: 0, ..ok.clone() },
            TrainConfig { patience: 0, ..ok.clone() },
            TrainConfig { patience: 101, ..ok.clone() },
            TrainConfig { cluster_refresh: 0, ..ok.clone() },
            TrainConfig { cluster_counts: vec![], ..ok.clone() },
            TrainConfig { cluster_counts: vec![0, 2], ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should be rejected");
        }
        // The identity-mask variant never clusters, so it tolerates an
        // empty candidate list.
        let ci = TrainConfig {
            cluster_counts: vec![],
            ablation: Ablation::CiOnly,
            ..ok
        };
        assert!(ci.validate().is_ok());

        assert!(RflConfig { hidden: 0, ..RflConfig::default() }.validate().is_err());
        assert!(RflConfig { t: 0.0, ..RflConfig::default() }.validate().is_err());
        assert!(RflConfig { epsilon: 1.5, ..RflConfig::default() }.validate().is_err());
    }

    #[test]
    fn ablation_tokens_round_trip() {
        for ablation in Ablation::ALL {
            let token = ablation.to_string();
            assert_eq!(token.parse::<Ablation>().unwrap(), ablation);
            let json = serde_json::to_string(&ablation).unwrap();
            assert_eq!(json, format!("\"{token}\""));
            assert_eq!(serde_json::from_str::<Ablation>(&json).unwrap(), ablation);
        }
        assert!("patch_only".parse::<Ablation>().is_err());
    }

    #[test]
    fn select_cluster_count_finds_planted_blobs() {
        let pts = blob_points();
        let (n, fit) = select_cluster_count(&pts.view(), &[1, 2, 3, 4], 5).unwrap();
        assert_eq!(n, 2);
        assert_eq!(fit.labels[0], fit.labels[3]);
        assert_eq!(fit.labels[4], fit.labels[7]);
        assert_ne!(fit.labels[0], fit.labels[4]);

        // A single candidate wins by default, even the lone cluster.
        let (n, _) = select_cluster_count(&pts.view(), &[3], 5).unwrap();
        assert_eq!(n, 3);
        let (n, fit) = select_cluster_count(&pts.view(), &[1], 5).unwrap();
        assert_eq!(n, 1);
        assert_eq!(fit.labels, vec![0; 8]);
    }

    #[test]
    fn select_cluster_count_rejects_bad_candidates() {
        let pts = blob_points();
        assert!(matches!(
            select_cluster_count(&pts.view(), &[], 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            select_cluster_count(&pts.view(), &[9], 0),
            Err(Error::TooManyClusters { requested: 9, channels: 8 })
        ));
    }

    #[test]
    fn pretrain_improves_reconstruction() {
        let series = tiny_series(3);
        let windows = make_windows(&series.train(), "train", 16, 4).unwrap();
        let val = make_windows(&series.val(), "val", 16, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ae = RecurrentAutoencoder::<f64>::new(&mut rng, 8, 3);
        let trace = pretrain_rfl(&ae, &windows, &val, 6, 1e-2, 32, &mut rng).unwrap();
        assert_eq!(trace.len(), 6);
        let first = trace.first().unwrap();
        let last = trace.last().unwrap();
        assert!(
            last.val_rec <= first.val_rec,
            "validation reconstruction should not regress: {} -> {}",
            first.val_rec,
            last.val_rec
        );
        assert!(last.train_rec < first.train_rec);

        let empty = pretrain_rfl(&ae, &windows, &val, 0, 1e-2, 32, &mut rng).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn full_run_reports_consistent_losses() {
        let report = run_tiny(tiny_train_config(Ablation::Full, 4));
        assert!(!report.epochs.is_empty() && report.epochs.len() <= 4);
        for record in &report.epochs {
            let composed =
                0.1 * record.train_ds + 1.0 * record.train_rec + record.train_pred;
            assert!(
                (record.train_total - composed).abs() <= 1e-6,
                "epoch {}: total {} vs composed {}",
                record.epoch,
                record.train_total,
                composed
            );
            assert!(record.train_ds >= 0.0);
            assert!(record.n_clusters >= 2 && record.n_clusters <= 3);
        }
        let min_val = report
            .epochs
            .iter()
            .map(|e| e.val_pred)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_pred, min_val);
        assert!(report.best_epoch >= 1 && report.best_epoch <= report.epochs_run());
        assert!(report.epochs_run() <= report.best_epoch + 20);
        assert!(report.test_mse.is_finite() && report.test_mae.is_finite());
        assert!(
            report.test_mae * report.test_mae <= report.test_mse + 1e-12,
            "mean absolute error squared cannot exceed mean squared error"
        );
        assert_eq!(report.cluster_count_history.len(), report.epochs_run());
        assert_eq!(report.final_cluster.labels.len(), 6);
        assert!(report.wall_clock_s > 0.0);
    }

    #[test]
    fn ablations_drop_their_loss_terms() {
        let no_gcl = run_tiny(tiny_train_config(Ablation::NoGcl, 2));
        for record in &no_gcl.epochs {
            assert_eq!(record.train_ds, 0.0);
            assert!(record.train_rec > 0.0);
        }

        let no_rfl = run_tiny(tiny_train_config(Ablation::NoRfl, 2));
        for record in &no_rfl.epochs {
            assert_eq!(record.train_rec, 0.0);
            assert!(record.train_ds > 0.0);
        }

        let dtw = run_tiny(tiny_train_config(Ablation::DtwCluster, 2));
        for record in &dtw.epochs {
            assert_eq!(record.train_rec, 0.0);
            assert_eq!(record.train_ds, 0.0);
        }
        // The warped-distance labels are computed once and never refreshed.
        assert!(dtw
            .cluster_count_history
            .iter()
            .all(|&n| n == dtw.cluster_count_history[0]));
    }

    #[test]
    fn ci_only_keeps_identity_mask() {
        let report = run_tiny(tiny_train_config(Ablation::CiOnly, 2));
        assert!(report.identity_mask_every_epoch);
        for record in &report.epochs {
            assert!(record.identity_mask);
            assert_eq!(record.n_clusters, 6);
            assert_eq!(record.train_ds, 0.0);
            assert_eq!(record.train_rec, 0.0);
        }
        assert!(report.final_cluster.mask.iter().enumerate().all(|(i, row)| {
            row.iter().enumerate().all(|(j, &v)| v == u8::from(i == j))
        }));
    }

    #[test]
    fn same_seed_reproduces_run() {
        let a = run_tiny(tiny_train_config(Ablation::Full, 2));
        let b = run_tiny(tiny_train_config(Ablation::Full, 2));
        assert_eq!(a.epochs.len(), b.epochs.len());
        for (ra, rb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ra.train_total, rb.train_total);
            assert_eq!(ra.val_pred, rb.val_pred);
            assert_eq!(ra.n_clusters, rb.n_clusters);
        }
        assert_eq!(a.test_mse, b.test_mse);
        assert_eq!(a.test_mae, b.test_mae);
        assert_eq!(a.final_cluster.labels, b.final_cluster.labels);
    }

    #[test]
    fn evaluate_scores_a_perfect_predictor_as_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patch = PatchConfig {
            patch_len: 8,
            stride: 4,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            dropout: 0.0,
            instance_norm: true,
        };
        let forecaster = Forecaster::<f64>::new(&mut rng, &patch, 16, 4).unwrap();
        let cluster = ClusterState::from_labels(vec![0, 0, 1]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let inputs = Array3::from_shape_fn((5, 3, 16), |_| normal.sample(&mut rng));

        let predictions = no_grad(|| {
            let x = Tensor::new(inputs.clone().into_dyn());
            let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
            forecaster
                .forward(&x, &cluster, false, &mut eval_rng)
                .value()
                .clone()
        });
        let targets = predictions
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        let windows = WindowBatch {
            inputs,
            targets: targets.clone(),
        };
        let (mse, mae) = evaluate(&forecaster, &cluster, &windows, 2);
        assert_eq!(mse, 0.0);
        assert_eq!(mae, 0.0);

        // Partial batches must not skew the average.
        let noisy = WindowBatch {
            inputs: windows.inputs.clone(),
            targets: targets + 0.5,
        };
        let whole = evaluate(&forecaster, &cluster, &noisy, 5);
        let split = evaluate(&forecaster, &cluster, &noisy, 2);
        assert!((whole.0 - split.0).abs() < 1e-12);
        assert!((whole.1 - split.1).abs() < 1e-12);
    }
}
