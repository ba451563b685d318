use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::neuronet::{complement, visible_count};

/// What happens to one modality's token run in a training step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Branch {
    /// The whole run is replaced by the mask token.
    Dropped,
    /// Only the listed positions (sorted) reach the multimodal encoder.
    Sampled(Vec<usize>),
}

/// Per-modality drop-or-sample decision shared by every sample of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropSamplePlan {
    pub n: usize,
    pub branches: Vec<Branch>,
}

impl DropSamplePlan {
    /// Each modality is dropped independently with `drop_prob`; draws where
    /// every modality is dropped are rejected and redrawn.
    pub fn sample(m: usize, n: usize, ratio: f64, drop_prob: f64, rng: &mut impl Rng) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Invalid("a plan needs at least one modality and one token".into()));
        }
        if !(0.0..1.0).contains(&drop_prob) {
            return Err(Error::Config(format!("drop_prob must be in [0, 1), got {drop_prob}")));
        }
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!("mask ratio must be in [0, 1), got {ratio}")));
        }
        let dropped = loop {
            let d: Vec<bool> = (0..m).map(|_| drop_prob > 0.0 && rng.random::<f64>() < drop_prob).collect();
            if d.iter().any(|x| !x) {
                break d;
            }
        };
        let keep = visible_count(n, ratio);
        let branches = dropped
            .into_iter()
            .map(|drop| {
                if drop {
                    Branch::Dropped
                } else {
                    let mut h = index::sample(rng, n, keep).into_vec();
                    h.sort_unstable();
                    Branch::Sampled(h)
                }
            })
            .collect();
        Ok(Self { n, branches })
    }

    /// Every modality observed with all positions visible.
    pub fn full(m: usize, n: usize) -> Self {
        Self { n, branches: vec![Branch::Sampled((0..n).collect()); m] }
    }

    pub fn n_modalities(&self) -> usize {
        self.branches.len()
    }

    pub fn is_dropped(&self, m: usize) -> bool {
        self.branches[m] == Branch::Dropped
    }

    pub fn sampled(&self) -> Vec<usize> {
        (0..self.n_modalities()).filter(|&m| !self.is_dropped(m)).collect()
    }

    pub fn dropped(&self) -> Vec<usize> {
        (0..self.n_modalities()).filter(|&m| self.is_dropped(m)).collect()
    }

    /// Sampled positions of modality `m`.
    pub fn kept(&self, m: usize) -> Option<&[usize]> {
        match &self.branches[m] {
            Branch::Sampled(h) => Some(h),
            Branch::Dropped => None,
        }
    }

    /// Positions of modality `m` left out of the sample.
    pub fn held_out(&self, m: usize) -> Option<Vec<usize>> {
        self.kept(m).map(|h| complement(h, self.n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_drop_probability_samples_everything() {
        let p = DropSamplePlan::sample(3, 27, 0.4, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(p.dropped().is_empty());
        assert!((0..3).all(|m| p.kept(m).unwrap().len() == 16));
        assert_eq!(p.held_out(0).unwrap().len(), 11);
    }

    #[test]
    fn never_drops_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = DropSamplePlan::sample(2, 4, 0.5, 0.9, &mut rng).unwrap();
            assert!(!p.sampled().is_empty());
        }
    }

    #[test]
    fn same_seed_same_plans() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(
                DropSamplePlan::sample(3, 9, 0.4, 0.5, &mut a).unwrap(),
                DropSamplePlan::sample(3, 9, 0.4, 0.5, &mut b).unwrap()
            );
        }
    }
}
