use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// One temporal augmentation; its random parameters are drawn per call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    /// Multiplies the whole window by a factor drawn from `[low, high]`.
    AmplitudeScale { low: f64, high: f64 },
    /// Adds i.i.d. Gaussian noise.
    GaussianJitter { std: f64 },
    /// Zeroes one contiguous span of up to `max_fraction` of the window.
    TimeMask { max_fraction: f64 },
    /// Circularly shifts by up to `max_fraction` of the window either way.
    TimeShift { max_fraction: f64 },
}

impl Augmentation {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Augmentation::AmplitudeScale { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Augmentation::GaussianJitter { std } => std.is_finite() && std >= 0.0,
            Augmentation::TimeMask { max_fraction } | Augmentation::TimeShift { max_fraction } => {
                (0.0..=1.0).contains(&max_fraction)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation {self:?}")))
        }
    }

    pub fn apply(&self, x: &mut [f64], rng: &mut impl Rng) {
        let len = x.len();
        match *self {
            Augmentation::AmplitudeScale { low, high } => {
                let s = if high > low { rng.random_range(low..=high) } else { low };
                x.iter_mut().for_each(|v| *v *= s);
            }
            Augmentation::GaussianJitter { std } => {
                if std > 0.0 {
                    let noise = Normal::new(0.0, std).expect("valid std");
                    x.iter_mut().for_each(|v| *v += noise.sample(rng));
                }
            }
            Augmentation::TimeMask { max_fraction } => {
                let span = rng.random_range(0..=(max_fraction * len as f64).floor() as usize);
                if span > 0 {
                    let start = rng.random_range(0..=len - span);
                    x[start..start + span].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            Augmentation::TimeShift { max_fraction } => {
                let max = (max_fraction * len as f64).floor() as i64;
                let shift = rng.random_range(-max..=max);
                x.rotate_right(shift.rem_euclid(len.max(1) as i64) as usize);
            }
        }
    }
}

/// Ordered list of augmentations applied to every window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPipeline {
    pub transforms: Vec<Augmentation>,
}

impl AugmentationPipeline {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Amplitude scaling in `[0.8, 1.2]` then jitter with std 0.01.
    pub fn default_path1() -> Self {
        Self {
            transforms: vec![
                Augmentation::AmplitudeScale { low: 0.8, high: 1.2 },
                Augmentation::GaussianJitter { std: 0.01 },
            ],
        }
    }

    /// Shift by up to 10% then mask up to 15%.
    pub fn default_path2() -> Self {
        Self {
            transforms: vec![
                Augmentation::TimeShift { max_fraction: 0.1 },
                Augmentation::TimeMask { max_fraction: 0.15 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transforms.iter().try_for_each(Augmentation::validate)
    }

    pub fn apply(&self, x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let mut out = x.to_vec();
        for t in &self.transforms {
            t.apply(&mut out, rng);
        }
        out
    }

    /// Augments every row of a `[B, L]` tensor independently.
    pub fn apply_batch(&self, x: &Tensor, rng: &mut impl Rng) -> Tensor {
        let l = x.dim(1);
        let data = x.data().chunks(l).flat_map(|row| self.apply(row, rng)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}
