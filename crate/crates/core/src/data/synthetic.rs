use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MultivariateSeries;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Base signal for one planted group: a sinusoid plus a linear trend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSignal {
    /// Period of the sinusoid in time steps.
    pub period: f64,
    /// Phase offset in radians.
    pub phase: f64,
    /// Linear trend added per step.
    pub slope: f64,
}

/// Recipe for a series with known cluster structure: channels in the same
/// group share a base signal and differ only by i.i.d. Gaussian noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_channels: usize,
    pub n_groups: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise_std: f64,
    /// Explicit per-group signals; derived from the group index when absent.
    #[serde(default)]
    pub groups: Option<Vec<GroupSignal>>,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.steps == 0 {
            return Err(Error::Config("synthetic spec needs channels and steps".into()));
        }
        if self.n_groups == 0 || self.n_groups > self.n_channels {
            return Err(Error::Config(format!(
                "n_groups {} must be in 1..={}",
                self.n_groups, self.n_channels
            )));
        }
        if let Some(groups) = &self.groups {
            if groups.len() != self.n_groups {
                return Err(Error::Config(format!(
                    "expected {} group signals, got {}",
                    self.n_groups,
                    groups.len()
                )));
            }
        }
        Ok(())
    }

    fn group_signal(&self, g: usize) -> GroupSignal {
        match &self.groups {
            Some(groups) => groups[g].clone(),
            // Distinct periods and phases per group keep cross-group
            // correlation low; no trend by default for the same reason.
            None => GroupSignal {
                period: 24.0 * (g + 1) as f64,
                phase: std::f64::consts::FRAC_PI_4 * g as f64,
                slope: 0.0,
            },
        }
    }

    /// Group of channel `i`: contiguous blocks, earlier groups get the
    /// remainder channels.
    pub fn group_of(&self, channel: usize) -> usize {
        channel * self.n_groups / self.n_channels
    }
}

/// Builds the planted-cluster series and its ground-truth labels.
/// Deterministic for a fixed spec (including seed).
pub fn generate_synthetic<F: Scalar>(
    spec: &SyntheticSpec,
) -> Result<(MultivariateSeries<F>, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::Config(format!("bad noise_std: {e}")))?;

    let bases: Vec<Vec<f64>> = (0..spec.n_groups)
        .map(|g| {
            let sig = spec.group_signal(g);
            (0..spec.steps)
                .map(|t| {
                    let t = t as f64;
                    (2.0 * std::f64::consts::PI * t / sig.period + sig.phase).sin()
                        + sig.slope * t
                })
                .collect()
        })
        .collect();

    let labels: Vec<usize> = (0..spec.n_channels).map(|i| spec.group_of(i)).collect();
    let mut values = Array2::<F>::zeros((spec.steps, spec.n_channels));
    for ch in 0..spec.n_channels {
        let base = &bases[labels[ch]];
        for t in 0..spec.steps {
            let noise = if spec.noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            values[[t, ch]] = F::of_f64(base[t] + noise);
        }
    }

    let names = (0..spec.n_channels).map(|i| format!("ch{i}")).collect();
    let series = MultivariateSeries::new(values, names)?;
    Ok((series, labels))
}
