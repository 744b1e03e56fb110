//! Run reports and the append-only metrics table.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterExport;
use crate::error::{Error, Result};

/// Loss components recorded for one epoch. Train-side values are means
/// over batches; the validation value is the forecast loss alone, which
/// also drives early stopping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rec: f64,
    pub train_ds: f64,
    pub train_pred: f64,
    pub train_total: f64,
    pub val_pred: f64,
    pub n_clusters: usize,
    pub identity_mask: bool,
}

/// Everything a finished run reports: per-epoch losses, the early-stopping
/// outcome, test metrics in dataset-normalized space, and the clustering
/// decision history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub horizon: usize,
    pub ablation: String,
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_pred: f64,
    pub test_mse: f64,
    pub test_mae: f64,
    pub cluster_count_history: Vec<usize>,
    pub identity_mask_every_epoch: bool,
    pub final_cluster: ClusterExport,
    pub wall_clock_s: f64,
}

impl RunReport {
    /// Number of epochs actually run.
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Appends one row to the shared metrics table, creating the file with a
/// header when absent. Columns: dataset, horizon, ablation, seed, mse,
/// mae, epochs, wall_clock_s.
pub fn append_metrics_csv(path: &Path, report: &RunReport) -> Result<()> {
    let exists = path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    if !exists {
        writer
            .write_record([
                "dataset",
                "horizon",
                "ablation",
                "seed",
                "mse",
                "mae",
                "epochs",
                "wall_clock_s",
            ])
            .map_err(|e| Error::Config(format!("metrics write failed: {e}")))?;
    }
    writer
        .write_record([
            report.dataset.clone(),
            report.horizon.to_string(),
            report.ablation.clone(),
            report.seed.to_string(),
            format!("{:.6}", report.test_mse),
            format!("{:.6}", report.test_mae),
            report.epochs_run().to_string(),
            format!("{:.3}", report.wall_clock_s),
        ])
        .map_err(|e| Error::Config(format!("metrics write failed: {e}")))?;
    writer
        .flush()
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterState;

    fn sample_report() -> RunReport {
        RunReport {
            dataset: "synthetic".into(),
            horizon: 24,
            ablation: "full".into(),
            seed: 7,
            config_hash: "abc123".into(),
            epochs: vec![EpochRecord {
                epoch: 0,
                train_rec: 1.0,
                train_ds: 0.5,
                train_pred: 2.0,
                train_total: 0.1 * 0.5 + 1.0 + 2.0,
                val_pred: 1.9,
                n_clusters: 2,
                identity_mask: false,
            }],
            best_epoch: 0,
            best_val_pred: 1.9,
            test_mse: 0.42,
            test_mae: 0.37,
            cluster_count_history: vec![2],
            identity_mask_every_epoch: false,
            final_cluster: ClusterState::from_labels(vec![0, 0, 1]).export(0.6),
            wall_clock_s: 1.5,
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = sample_report();
        report.write_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.test_mse, report.test_mse);
        assert_eq!(parsed.epochs.len(), 1);
        assert_eq!(parsed.final_cluster.labels, vec![0, 0, 1]);
    }

    #[test]
    fn metrics_csv_appends_with_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let report = sample_report();
        append_metrics_csv(&path, &report).unwrap();
        append_metrics_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("dataset,horizon,ablation,seed"));
        assert!(lines[1].starts_with("synthetic,24,full,7,0.420000,0.370000,1,"));
        assert_eq!(lines[1], lines[2]);
    }
}
