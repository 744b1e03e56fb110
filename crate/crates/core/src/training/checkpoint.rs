//! Single-file checkpoints: a JSON header describing the run and the
//! parameter manifest, followed by a raw little-endian f64 blob.
//!
//! Only the forecaster and the final clustering decision are persisted;
//! they are sufficient for evaluation, forecasting, and inspection. Writes
//! go to a temporary file in the target directory and are renamed into
//! place so a crash cannot leave a half-written checkpoint behind.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterExport, ClusterState};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, PatchConfig};
use crate::nn::Module;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"DGCFCKPT";
const SCHEMA_VERSION: u32 = 1;

/// Shape manifest entry for one named parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Headline metrics frozen into the checkpoint header.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub val_pred: f64,
    pub test_mse: f64,
    pub test_mae: f64,
}

/// Run-identifying fields supplied by the caller at save time.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub dataset: String,
    pub epoch: usize,
    pub metrics: CheckpointMetrics,
    pub graph_threshold: f64,
}

/// JSON header stored ahead of the parameter blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub dataset: String,
    pub epoch: usize,
    pub metrics: CheckpointMetrics,
    pub lookback: usize,
    pub horizon: usize,
    pub patch: PatchConfig,
    pub cluster: ClusterExport,
    pub params: Vec<ParamSpec>,
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::BadCheckpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    forecaster: &Forecaster<F>,
    cluster: &ClusterState,
    meta: &CheckpointMeta,
) -> Result<()> {
    let params = forecaster.params();
    let header = CheckpointHeader {
        schema_version: SCHEMA_VERSION,
        config_hash: meta.config_hash.clone(),
        dataset: meta.dataset.clone(),
        epoch: meta.epoch,
        metrics: meta.metrics,
        lookback: forecaster.lookback(),
        horizon: forecaster.horizon(),
        patch: forecaster.config().clone(),
        cluster: cluster.export(meta.graph_threshold),
        params: params
            .iter()
            .map(|(name, p)| ParamSpec {
                name: name.clone(),
                shape: p.shape(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Config(format!("checkpoint header serialization failed: {e}")))?;
    let blob_len: usize = params
        .iter()
        .map(|(_, p)| p.shape().iter().product::<usize>())
        .sum();
    let mut buf = Vec::with_capacity(MAGIC.len() + 8 + header_bytes.len() + blob_len * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (_, p) in &params {
        for &v in p.value().iter() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads just the header of a checkpoint file.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_header(path, &bytes).map(|(header, _)| header)
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad(path, "not a checkpoint file (bad magic)"));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let header_start = MAGIC.len() + 8;
    let blob_start = header_start + header_len;
    if bytes.len() < blob_start {
        return Err(bad(path, "truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[header_start..blob_start])
        .map_err(|e| bad(path, format!("malformed header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(bad(
            path,
            format!("unsupported schema version {}", header.schema_version),
        ));
    }
    Ok((header, blob_start))
}

/// Loads a checkpoint into a freshly built forecaster of scalar type `F`.
pub fn load_checkpoint<F: Scalar>(
    path: &Path,
) -> Result<(Forecaster<F>, ClusterState, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, blob_start) = parse_header(path, &bytes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let forecaster = Forecaster::<F>::new(&mut rng, &header.patch, header.lookback, header.horizon)?;
    let params = forecaster.params();
    if params.len() != header.params.len() {
        return Err(bad(
            path,
            format!(
                "parameter manifest length {} does not match model ({})",
                header.params.len(),
                params.len()
            ),
        ));
    }
    let mut offset = blob_start;
    for ((name, param), spec) in params.iter().zip(&header.params) {
        if name != &spec.name || param.shape() != spec.shape {
            return Err(bad(
                path,
                format!("manifest entry {} does not match model parameter {name}", spec.name),
            ));
        }
        let count: usize = spec.shape.iter().product();
        let end = offset + count * 8;
        if bytes.len() < end {
            return Err(bad(path, "truncated parameter blob"));
        }
        let mut values = Vec::with_capacity(count);
        for chunk in bytes[offset..end].chunks_exact(8) {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(chunk);
            values.push(F::of_f64(f64::from_le_bytes(raw)));
        }
        let array = ArrayD::from_shape_vec(IxDyn(&spec.shape), values)
            .map_err(|e| bad(path, format!("bad parameter shape: {e}")))?;
        param.set_value(array);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad(path, "trailing bytes after parameter blob"));
    }
    let cluster = ClusterState::from_labels(header.cluster.labels.clone());
    let stored_mask: Vec<Vec<u8>> = cluster.mask.rows().into_iter().map(|r| r.to_vec()).collect();
    if stored_mask != header.cluster.mask || cluster.n != header.cluster.n {
        return Err(bad(path, "cluster labels and mask disagree"));
    }
    Ok((forecaster, cluster, header))
}
