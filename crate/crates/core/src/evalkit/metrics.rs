use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Fraction of predictions equal to their label.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Invalid(format!("accuracy needs equal non-empty inputs, got {} and {}", preds.len(), labels.len())));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counting one half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based ranks of the positives, tied groups sharing their mean rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Macro one-vs-rest AUC over classes that have both positives and negatives.
/// `scores`: `[n, C]` per-class scores.
pub fn macro_auc(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, c) = (scores.dim(0), scores.dim(1));
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} score rows for {} labels", labels.len())));
    }
    let mut aucs = Vec::new();
    for k in 0..c {
        let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if pos.iter().all(|&p| p) || !pos.iter().any(|&p| p) {
            continue;
        }
        let col: Vec<f64> = (0..n).map(|i| scores.data()[i * c + k]).collect();
        aucs.push(binary_auc(&col, &pos)?);
    }
    if aucs.is_empty() {
        return Err(Error::Invalid("AUC needs at least two classes present".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        // TP=3 TN=2 FP=1 FN=2
        let preds = [1, 1, 1, 0, 0, 1, 0, 0];
        let labels = [1, 1, 1, 0, 0, 0, 1, 1];
        assert_eq!(accuracy(&preds, &labels).unwrap(), 0.625);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn auc_edges() {
        assert_eq!(binary_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(binary_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(binary_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(binary_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn macro_auc_two_classes_matches_binary() {
        let s = Tensor::new([4, 2], vec![0.7, 0.3, 0.4, 0.6, 0.45, 0.55, 0.2, 0.8]);
        let labels = [0, 1, 0, 1];
        let bin = binary_auc(&[0.3, 0.6, 0.55, 0.8], &[false, true, false, true]).unwrap();
        assert_eq!(macro_auc(&s, &labels).unwrap(), bin);
        assert!(macro_auc(&s, &[1, 1, 1, 1]).is_err());
    }
}
