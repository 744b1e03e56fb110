//! The experiment configuration file: one TOML document with sections
//! mirroring the module types. Every field has a default, so an empty file
//! is a valid ETTh1 experiment; unknown keys are rejected to catch typos.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
use crate::data::{load_csv, MultivariateSeries, SplitSpec};
use crate::error::{Error, Result};
use crate::forecaster::PatchConfig;
use crate::scalar::Scalar;
use crate::training::{RflConfig, TrainConfig};

/// Fallback dataset root when the config gives no explicit path.
pub const DATA_DIR_ENV: &str = "DGC_DATA_DIR";

/// Top-level settings for one experiment.
///
/// `dataset = "synthetic"` generates data from the `[synthetic]` section
/// instead of reading a CSV. For real datasets the CSV is found through
/// `data_path`, then `$DGC_DATA_DIR/<dataset>.csv`, then
/// `./data/<dataset>.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: String,
    /// Explicit CSV path, bypassing directory resolution.
    pub data_path: Option<PathBuf>,
    pub lookback: usize,
    pub horizon: usize,
    /// Absolute correlation threshold for the channel graph.
    pub graph_threshold: f64,
    /// Replace missing CSV values with the previous step instead of
    /// rejecting the file.
    pub forward_fill: bool,
    /// Where reports, checkpoints and images are written.
    pub out_dir: PathBuf,
    pub patch: PatchConfig,
    pub train: TrainConfig,
    pub rfl: RflConfig,
    /// Train/val/test carve-up; by dataset convention when absent (fixed
    /// counts for hourly ETT, 0.7/0.1 ratios otherwise).
    pub split: Option<SplitSpec>,
    /// Recipe used when `dataset = "synthetic"`.
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "etth1".to_string(),
            data_path: None,
            lookback: 96,
            horizon: 96,
            graph_threshold: 0.6,
            forward_fill: false,
            out_dir: PathBuf::from("runs"),
            patch: PatchConfig::default(),
            train: TrainConfig::default(),
            rfl: RflConfig::default(),
            split: None,
            synthetic: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML config file.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and validates a TOML string.
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::Config("dataset name must be non-empty".into()));
        }
        if self.lookback == 0 || self.horizon == 0 {
            return Err(Error::Config(format!(
                "lookback and horizon must be at least 1, got {} and {}",
                self.lookback, self.horizon
            )));
        }
        if !(self.graph_threshold > 0.0 && self.graph_threshold < 1.0) {
            return Err(Error::Config(format!(
                "graph_threshold must lie strictly between 0 and 1, got {}",
                self.graph_threshold
            )));
        }
        // Surface patch geometry problems at parse time rather than deep
        // inside model construction.
        self.patch.n_patches(self.lookback)?;
        if self.patch.d_model % self.patch.n_heads.max(1) != 0 || self.patch.n_heads == 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.patch.d_model, self.patch.n_heads
            )));
        }
        self.train.validate()?;
        self.rfl.validate()?;
        Ok(())
    }

    /// The full configuration with all defaults filled in, as TOML.
    /// Feeding this text back through [`ExperimentConfig::from_toml`]
    /// reproduces the config exactly.
    pub fn effective_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Truncated SHA-256 of the effective config, identifying a run's
    /// settings in reports and checkpoints.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.effective_toml().as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// Whether the dataset comes from the synthetic generator.
    pub fn is_synthetic(&self) -> bool {
        self.dataset.eq_ignore_ascii_case("synthetic")
    }

    /// The synthetic recipe, defaulted to eight channels in two groups.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        self.synthetic.clone().unwrap_or(SyntheticSpec {
            n_channels: 8,
            n_groups: 2,
            steps: 2000,
            seed: 0,
            noise_std: 0.1,
            groups: None,
        })
    }

    pub fn split_spec(&self) -> SplitSpec {
        self.split
            .clone()
            .unwrap_or_else(|| SplitSpec::default_for(&self.dataset))
    }

    /// Where the dataset CSV lives: the explicit `data_path`, else
    /// `<dataset>.csv` under `$DGC_DATA_DIR`, else under `./data`.
    pub fn resolve_data_path(&self) -> PathBuf {
        if let Some(path) = &self.data_path {
            return path.clone();
        }
        let file = if self.dataset.ends_with(".csv") {
            self.dataset.clone()
        } else {
            format!("{}.csv", self.dataset)
        };
        let root = env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data"));
        root.join(file)
    }

    /// Loads (or generates) the dataset with its split applied. Returns
    /// the series plus the planted group labels when they are known.
    pub fn load_series<F: Scalar>(&self) -> Result<(MultivariateSeries<F>, Option<Vec<usize>>)> {
        if self.is_synthetic() {
            let (series, labels) = generate_synthetic(&self.synthetic_spec())?;
            let series = series.with_split(&self.split_spec())?;
            return Ok((series, Some(labels)));
        }
        let path = self.resolve_data_path();
        let series = load_csv(&path, self.forward_fill)?;
        let series = series.with_split(&self.split_spec())?;
        Ok((series, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_experiment() {
        let config = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(config.dataset, "etth1");
        assert_eq!(config.lookback, 96);
        assert_eq!(config.horizon, 96);
        assert_eq!(config.graph_threshold, 0.6);
        assert_eq!(config.patch.patch_len, 16);
        assert_eq!(config.train.batch_size, 128);
        assert_eq!(config.rfl.hidden, 32);
        assert_eq!(
            config.split_spec(),
            SplitSpec::Counts { train: 8545, val: 2881, test: 2881 }
        );
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        assert!(ExperimentConfig::from_toml("lookbck = 96").is_err());
        assert!(ExperimentConfig::from_toml("[patch]\npatch_length = 16").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nlearning_rate = 0.1").is_err());
    }

    #[test]
    fn sections_override_defaults() {
        let text = r#"
            dataset = "weather"
            horizon = 192

            [patch]
            patch_len = 24
            stride = 2

            [train]
            ablation = "dtw_cluster"
            max_epochs = 10
            patience = 5

            [split.ratios]
            train = 0.6
            val = 0.2

            [synthetic]
            n_channels = 4
            n_groups = 2
            steps = 100
            seed = 1
        "#;
        let config = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(config.dataset, "weather");
        assert_eq!(config.horizon, 192);
        assert_eq!(config.patch.patch_len, 24);
        assert_eq!(config.patch.d_model, 128);
        assert_eq!(config.train.max_epochs, 10);
        assert_eq!(config.split_spec(), SplitSpec::Ratios { train: 0.6, val: 0.2 });
        assert_eq!(config.synthetic_spec().n_channels, 4);
    }

    #[test]
    fn effective_config_round_trips() {
        let text = "dataset = \"synthetic\"\nhorizon = 24\n[train]\nseed = 9\n";
        let config = ExperimentConfig::from_toml(text).unwrap();
        let effective = config.effective_toml();
        let reparsed = ExperimentConfig::from_toml(&effective).unwrap();
        assert_eq!(effective, reparsed.effective_toml());
        assert_eq!(config.hash(), reparsed.hash());
    }

    #[test]
    fn hash_tracks_settings() {
        let a = ExperimentConfig::from_toml("").unwrap();
        let b = ExperimentConfig::from_toml("horizon = 336").unwrap();
        assert_eq!(a.hash().len(), 16);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        for bad in [
            "graph_threshold = 1.0",
            "lookback = 0",
            "dataset = \"\"",
            "[patch]\npatch_len = 200",
            "[patch]\nn_heads = 3",
            "[train]\npatience = 0",
            "[rfl]\nepsilon = 2.0",
        ] {
            assert!(ExperimentConfig::from_toml(bad).is_err(), "{bad} should fail");
        }
    }

    #[test]
    fn data_path_resolution_prefers_explicit_path() {
        let mut config = ExperimentConfig::default();
        config.data_path = Some(PathBuf::from("/tmp/custom.csv"));
        assert_eq!(config.resolve_data_path(), PathBuf::from("/tmp/custom.csv"));

        config.data_path = None;
        config.dataset = "etth2".to_string();
        let resolved = config.resolve_data_path();
        assert!(resolved.ends_with("etth2.csv"));
    }

    #[test]
    fn synthetic_series_loads_with_labels() {
        let text = r#"
            dataset = "synthetic"
            [synthetic]
            n_channels = 6
            n_groups = 3
            steps = 120
            seed = 2
            noise_std = 0.05
            [split.ratios]
            train = 0.6
            val = 0.2
        "#;
        let config = ExperimentConfig::from_toml(text).unwrap();
        let (series, labels) = config.load_series::<f64>().unwrap();
        assert_eq!(series.channels(), 6);
        assert_eq!(series.steps(), 120);
        assert_eq!(labels, Some(vec![0, 0, 1, 1, 2, 2]));
        assert_eq!(series.train().nrows(), 72);
    }
}
