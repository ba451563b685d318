use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Ctx, Init, InitKind, ParamStore};

use super::metrics::{accuracy, macro_auc};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("probe needs epochs, batch size and lr positive".into()));
        }
        Ok(())
    }
}

/// Affine classifier on frozen features. Inputs are standardized with the
/// training-set statistics, which keeps the whole map affine.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    pub params: ParamStore,
    pub n_classes: usize,
}

const W: &str = "probe/w";
const B: &str = "probe/b";
const MEAN: &str = "probe/mean";
const SCALE: &str = "probe/inv_std";

impl LinearProbe {
    /// Fits the probe with AdamW on softmax cross-entropy.
    pub fn fit(features: &Tensor, labels: &[usize], n_classes: usize, cfg: &ProbeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (n, d) = (features.dim(0), features.dim(1));
        if n == 0 || n != labels.len() {
            return Err(Error::Invalid(format!("probe got {n} feature rows for {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Invalid(format!("label {bad} out of range for {n_classes} classes")));
        }
        if !features.is_finite() {
            return Err(Error::Numeric("non-finite probe features".into()));
        }
        let x = features.data();
        let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64).collect();
        let inv_std: Vec<f64> = (0..d)
            .map(|j| {
                let var = (0..n).map(|i| (x[i * d + j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                1.0 / (var.sqrt() + 1e-8)
            })
            .collect();
        let mut params = ParamStore::new();
        params.insert(MEAN, Tensor::new([d], mean), false);
        params.insert(SCALE, Tensor::new([d], inv_std), false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut params, &mut rng);
        init.tensor(W, &[d, n_classes], InitKind::Zeros);
        init.tensor(B, &[n_classes], InitKind::Zeros);
        let probe = Self { params, n_classes };
        let z = probe.standardize(features);
        let mut params = probe.params;
        let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let g = Graph::new();
                let ctx = Ctx::deterministic(&g, &params);
                let logits = ctx.constant(z.select(0, chunk)).matmul(ctx.param(W)).add(ctx.param(B));
                let picks: Vec<usize> = chunk.iter().enumerate().map(|(r, &i)| r * n_classes + labels[i]).collect();
                let loss = logits.log_softmax().reshape([chunk.len() * n_classes]).index_select(0, &picks).mean_all().neg();
                if !loss.item().is_finite() {
                    return Err(Error::Numeric("non-finite probe loss".into()));
                }
                let grads = ctx.param_grads(&g.backward(loss));
                opt.step(&mut params, &grads);
            }
        }
        Ok(Self { params, n_classes })
    }

    fn standardize(&self, features: &Tensor) -> Tensor {
        let (n, d) = (features.dim(0), features.dim(1));
        let (mean, inv) = (self.params.value(MEAN).data(), self.params.value(SCALE).data());
        let data = features.data().iter().enumerate().map(|(k, v)| (v - mean[k % d]) * inv[k % d]).collect();
        Tensor::new([n, d], data)
    }

    /// Class probabilities, `[n, C]`.
    pub fn predict_proba(&self, features: &Tensor) -> Tensor {
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &self.params);
        let logits = ctx.constant(self.standardize(features)).matmul(ctx.param(W)).add(ctx.param(B));
        (*logits.softmax().value()).clone()
    }

    pub fn predict(&self, features: &Tensor) -> Vec<usize> {
        let p = self.predict_proba(features);
        let c = self.n_classes;
        p.data()
            .chunks(c)
            .map(|row| (0..c).fold(0, |best, k| if row[k] > row[best] { k } else { best }))
            .collect()
    }

    /// `(ACC, AUC)` on labelled features.
    pub fn evaluate(&self, features: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
        let acc = accuracy(&self.predict(features), labels)?;
        let auc = macro_auc(&self.predict_proba(features), labels)?;
        Ok((acc, auc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[3.0, 0.0], [0.0, 3.0], [-3.0, -3.0]];
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let data = labels.iter().flat_map(|&l| centers[l].map(|c| c + rng.random_range(-1.0..1.0))).collect();
        (Tensor::new([n, 2], data), labels)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(90, 0);
        let cfg = ProbeConfig { epochs: 50, lr: 5e-2, batch_size: 16, weight_decay: 0.0 };
        let probe = LinearProbe::fit(&x, &y, 3, &cfg, 1).unwrap();
        let (xt, yt) = blobs(60, 1);
        let (acc, auc) = probe.evaluate(&xt, &yt).unwrap();
        assert!(acc > 0.95 && auc > 0.99, "acc {acc} auc {auc}");
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, y) = blobs(12, 2);
        let cfg = ProbeConfig { epochs: 2, lr: 1e-2, batch_size: 4, weight_decay: 0.01 };
        let p = LinearProbe::fit(&x, &y, 3, &cfg, 0).unwrap().predict_proba(&x);
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_labels() {
        let (x, _) = blobs(3, 0);
        let cfg = ProbeConfig { epochs: 1, lr: 1e-2, batch_size: 4, weight_decay: 0.0 };
        assert!(LinearProbe::fit(&x, &[0, 1, 5], 3, &cfg, 0).is_err());
    }
}
