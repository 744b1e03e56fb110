//! Dataset ingestion, normalization, splitting, and windowing.
//!
//! Layout conventions: series values are `[T, N]` (time by channel, the CSV
//! order); model windows are `[B, N, L]` (channel-major per window, the
//! shape the forecaster consumes).

mod csv_io;
pub mod synthetic;

pub use csv_io::{load_csv, write_csv};
pub use synthetic::{generate_synthetic, GroupSignal, SyntheticSpec};

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A multivariate series in time-major layout with its split boundaries.
#[derive(Debug, Clone)]
pub struct MultivariateSeries<F: Scalar> {
    /// `[T, N]`: rows are time steps, columns are channels.
    pub values: Array2<F>,
    pub channel_names: Vec<String>,
    /// Sampling frequency label when known; informational only.
    pub frequency: Option<String>,
    /// Contiguous (train, val, test) step counts, in temporal order.
    pub split_sizes: (usize, usize, usize),
}

/// How to carve a series into train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Explicit step counts.
    Counts { train: usize, val: usize, test: usize },
    /// Fractions for train and val; test takes the remainder.
    Ratios { train: f64, val: f64 },
}

impl SplitSpec {
    /// The benchmark convention: fixed counts for the hourly ETT datasets,
    /// 0.7/0.1/0.2 otherwise.
    pub fn default_for(dataset: &str) -> SplitSpec {
        if dataset.to_ascii_lowercase().starts_with("etth") {
            SplitSpec::Counts {
                train: 8545,
                val: 2881,
                test: 2881,
            }
        } else {
            SplitSpec::Ratios { train: 0.7, val: 0.1 }
        }
    }

    pub fn resolve(&self, total: usize) -> Result<(usize, usize, usize)> {
        let (train, val, test) = match *self {
            SplitSpec::Counts { train, val, test } => (train, val, test),
            SplitSpec::Ratios { train, val } => {
                if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val >= 1.0 {
                    return Err(Error::Config(format!(
                        "split ratios ({train}, {val}) must be in [0,1] and sum below 1"
                    )));
                }
                let n_train = (total as f64 * train).floor() as usize;
                let n_val = (total as f64 * val).floor() as usize;
                (n_train, n_val, total - n_train - n_val)
            }
        };
        let requested = train + val + test;
        if requested > total {
            return Err(Error::SplitTooLarge {
                requested,
                available: total,
            });
        }
        Ok((train, val, test))
    }
}

impl<F: Scalar> MultivariateSeries<F> {
    pub fn new(values: Array2<F>, channel_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptySeries);
        }
        let steps = values.nrows();
        Ok(MultivariateSeries {
            values,
            channel_names,
            frequency: None,
            split_sizes: (steps, 0, 0),
        })
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn with_split(mut self, spec: &SplitSpec) -> Result<Self> {
        self.split_sizes = spec.resolve(self.steps())?;
        Ok(self)
    }

    pub fn train(&self) -> ArrayView2<'_, F> {
        let (t, _, _) = self.split_sizes;
        self.values.slice(s![..t, ..])
    }

    pub fn val(&self) -> ArrayView2<'_, F> {
        let (t, v, _) = self.split_sizes;
        self.values.slice(s![t..t + v, ..])
    }

    pub fn test(&self) -> ArrayView2<'_, F> {
        let (t, v, te) = self.split_sizes;
        self.values.slice(s![t + v..t + v + te, ..])
    }

    /// Standardizes all splits in place using train-split statistics and
    /// returns the statistics for later inversion.
    pub fn normalize(&mut self) -> NormalizationStats<F> {
        let stats = NormalizationStats::fit(&self.train());
        stats.apply(&mut self.values);
        stats
    }
}

/// Per-channel mean and floored standard deviation from the train split.
#[derive(Debug, Clone)]
pub struct NormalizationStats<F: Scalar> {
    pub mean: Array1<F>,
    pub std: Array1<F>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl<F: Scalar> NormalizationStats<F> {
    pub fn fit(train: &ArrayView2<'_, F>) -> Self {
        let t = F::of_usize(train.nrows().max(1));
        let mean = train.sum_axis(Axis(0)) / t;
        let mut std = Array1::zeros(train.ncols());
        for (j, col) in train.columns().into_iter().enumerate() {
            let m = mean[j];
            let var = col.iter().map(|&x| (x - m) * (x - m)).fold(F::zero(), |a, b| a + b) / t;
            std[j] = var.sqrt().max(F::of_f64(STD_FLOOR));
        }
        NormalizationStats { mean, std }
    }

    pub fn apply(&self, values: &mut Array2<F>) {
        for (j, mut col) in values.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|x| (x - m) / s);
        }
    }

    pub fn invert(&self, values: &mut Array2<F>) {
        for (j, mut col) in values.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|x| x * s + m);
        }
    }

    /// Undoes normalization for one channel's values.
    pub fn invert_channel(&self, channel: usize, values: &mut [F]) {
        let (m, s) = (self.mean[channel], self.std[channel]);
        for v in values {
            *v = *v * s + m;
        }
    }
}

/// Look-back/horizon pairs cut from one split with stride 1.
#[derive(Debug, Clone)]
pub struct WindowBatch<F: Scalar> {
    /// `[B, N, L]`
    pub inputs: Array3<F>,
    /// `[B, N, S]`
    pub targets: Array3<F>,
}

impl<F: Scalar> WindowBatch<F> {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookback(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[2]
    }

    /// Gathers the given window indices into a dense batch.
    pub fn gather(&self, indices: &[usize]) -> WindowBatch<F> {
        let select = |a: &Array3<F>| a.select(Axis(0), indices);
        WindowBatch {
            inputs: select(&self.inputs),
            targets: select(&self.targets),
        }
    }

    /// The first `count` windows, in temporal order.
    pub fn head(&self, count: usize) -> WindowBatch<F> {
        let count = count.min(self.len());
        WindowBatch {
            inputs: self.inputs.slice(s![..count, .., ..]).to_owned(),
            targets: self.targets.slice(s![..count, .., ..]).to_owned(),
        }
    }
}

/// Cuts all `(L, S)` windows from one split view (`[steps, N]`), stride 1.
/// Windows never cross the split boundary by construction.
pub fn make_windows<F: Scalar>(
    split: &ArrayView2<'_, F>,
    split_name: &'static str,
    lookback: usize,
    horizon: usize,
) -> Result<WindowBatch<F>> {
    let steps = split.nrows();
    let n = split.ncols();
    if steps < lookback + horizon {
        return Err(Error::SplitTooShort {
            split: split_name,
            steps,
            lookback,
            horizon,
        });
    }
    let count = steps - lookback - horizon + 1;
    let mut inputs = Array3::zeros((count, n, lookback));
    let mut targets = Array3::zeros((count, n, horizon));
    for b in 0..count {
        for ch in 0..n {
            for t in 0..lookback {
                inputs[[b, ch, t]] = split[[b + t, ch]];
            }
            for t in 0..horizon {
                targets[[b, ch, t]] = split[[b + lookback + t, ch]];
            }
        }
    }
    Ok(WindowBatch { inputs, targets })
}
