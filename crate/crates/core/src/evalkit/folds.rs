use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FOLDS: usize = 5;
/// Share of non-test subjects used for self-supervised pretraining.
pub const PRETRAIN_SHARE: f64 = 0.7;

/// Subject roles within one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub pretrain: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    /// Rows of `subjects` (one entry per row) whose subject is in `role`.
    pub fn rows(role: &[String], subjects: &[String]) -> Vec<usize> {
        (0..subjects.len()).filter(|&i| role.contains(&subjects[i])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Shuffles the distinct subjects with `seed` and splits them into
/// [`N_FOLDS`] test groups; the rest of each fold is split pretrain:train.
pub fn make_folds(subjects: &[String], seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<String> = subjects.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < N_FOLDS {
        return Err(Error::Invalid(format!("{} subjects cannot fill {N_FOLDS} folds", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let folds = (0..N_FOLDS)
        .map(|k| {
            let (lo, hi) = (k * n / N_FOLDS, (k + 1) * n / N_FOLDS);
            let test = ids[lo..hi].to_vec();
            let rest: Vec<String> = ids[..lo].iter().chain(&ids[hi..]).cloned().collect();
            let n_pre = ((rest.len() as f64 * PRETRAIN_SHARE).round() as usize).clamp(1, rest.len() - 1);
            Fold { pretrain: rest[..n_pre].to_vec(), train: rest[n_pre..].to_vec(), test }
        })
        .collect();
    Ok(FoldPlan { folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn ten_subjects_two_per_test_set() {
        let plan = make_folds(&subjects(10), 0).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for f in &plan.folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.pretrain.len() + f.train.len(), 8);
            assert_eq!(f.pretrain.len(), 6);
        }
    }

    #[test]
    fn test_sets_partition_subjects() {
        let plan = make_folds(&subjects(23), 4).unwrap();
        let mut all: Vec<String> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort();
        assert_eq!(all, subjects(23));
    }

    #[test]
    fn seeded_and_validated() {
        assert_eq!(make_folds(&subjects(7), 3).unwrap(), make_folds(&subjects(7), 3).unwrap());
        assert!(make_folds(&subjects(4), 0).is_err());
    }

    #[test]
    fn rows_follow_subjects() {
        let rows = ["a", "b", "a", "c"].map(String::from);
        assert_eq!(Fold::rows(&["a".to_string()], &rows), vec![0, 2]);
    }
}
