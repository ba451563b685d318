//! Dual-path NeuroNet: two weight-shared passes over differently augmented
//! views of the same windows, tied together by a cross-view NT-Xent.

mod augment;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{Augmentation, AugmentationPipeline};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::neuronet::{nt_xent, NeuroNet, NeuroNetConfig};
use crate::nn::{AdamW, AdamWConfig, Ctx, Init, ParamStore};
use crate::signal::{frame_batch, frame_count, ModalityBatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Also optimize each path's own two-view NT-Xent.
    pub internal_contrastive: bool,
    pub augment1: AugmentationPipeline,
    pub augment2: AugmentationPipeline,
}

impl DpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("dp_neuronet needs epochs >= 1 and batch_size >= 2".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("dp_neuronet lr must be positive and weight decay non-negative".into()));
        }
        self.augment1.validate()?;
        self.augment2.validate()
    }
}

/// Parameter prefix of modality `m`'s backbone.
pub fn neuronet_prefix(m: usize) -> String {
    format!("neuronet/{m}")
}

/// NT-Xent between the two paths' projections; the same formula as the
/// backbone's two-view loss.
pub fn dp_nt_xent<'g>(z1: Var<'g>, z2: Var<'g>, tau: f64) -> Result<Var<'g>> {
    nt_xent(z1, z2, tau)
}

/// Everything one dual-path forward produces.
pub struct DpOutputs<'g> {
    pub z1: Var<'g>,
    pub z2: Var<'g>,
    /// Mean of each path's two masked reconstruction losses.
    pub recon1: Var<'g>,
    pub recon2: Var<'g>,
    /// Each path's own two-view contrastive term.
    pub internal1: Var<'g>,
    pub internal2: Var<'g>,
    pub ntxent: Var<'g>,
    pub total: Var<'g>,
}

/// Runs both paths over `signals` (`[B, L]`). Path 1 binds parameters through
/// `ctx1`, path 2 through `ctx2`; passing the same context twice shares every
/// tensor between the paths.
#[allow(clippy::too_many_arguments)]
pub fn dp_forward<'g>(
    ctx1: &Ctx<'g, '_>,
    ctx2: &Ctx<'g, '_>,
    net: &NeuroNet,
    signals: &Tensor,
    frame: (usize, usize),
    cfg: &DpTrainConfig,
    rng: &mut impl Rng,
) -> Result<DpOutputs<'g>> {
    let x1 = cfg.augment1.apply_batch(signals, rng);
    let x2 = cfg.augment2.apply_batch(signals, rng);
    let mut path = |ctx: &Ctx<'g, '_>, x: Tensor| -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
        let frames = ctx.constant(frame_batch(&x, frame.0, frame.1)?);
        let tokens = net.frame_encode(ctx, frames)?;
        let losses = net.losses(ctx, tokens, rng)?;
        let z = net.project(ctx, NeuroNet::pool(net.encode_full(ctx, tokens)?));
        Ok((z, losses.recon1.add(losses.recon2).scale(0.5), losses.contrastive))
    };
    let (z1, recon1, internal1) = path(ctx1, x1)?;
    let (z2, recon2, internal2) = path(ctx2, x2)?;
    let ntxent = dp_nt_xent(z1, z2, net.cfg.temperature)?;
    let alpha = net.cfg.alpha;
    let mut total = recon1.add(recon2).scale(0.5).add(ntxent.scale(alpha));
    if cfg.internal_contrastive {
        total = total.add(internal1.add(internal2).scale(0.5 * alpha));
    }
    Ok(DpOutputs { z1, z2, recon1, recon2, internal1, internal2, ntxent, total })
}

/// Per-epoch mean losses of one modality's pretraining.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpEpoch {
    pub modality: usize,
    pub epoch: usize,
    pub recon1: f64,
    pub recon2: f64,
    pub ntxent: f64,
    pub total: f64,
}

/// Builds (or binds to existing) backbone parameters for every modality.
pub fn build_backbones(
    store: &mut ParamStore,
    cfg: &NeuroNetConfig,
    n_modalities: usize,
    n_tokens: usize,
    seed: u64,
) -> Vec<NeuroNet> {
    (0..n_modalities)
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            NeuroNet::new(&mut Init::new(store, &mut rng), &neuronet_prefix(m), cfg, n_tokens)
        })
        .collect()
}

/// Pretrains one backbone per modality on `rows` of `ds`. Returns the
/// parameters of all backbones and the per-epoch loss log.
pub fn pretrain_dp_neuronet(
    ds: &ModalityBatch,
    rows: &[usize],
    nn_cfg: &NeuroNetConfig,
    cfg: &DpTrainConfig,
    frame: (usize, usize),
    seed: u64,
) -> Result<(ParamStore, Vec<DpEpoch>)> {
    nn_cfg.validate()?;
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut log = Vec::new();
    for m in 0..ds.n_modalities() {
        let present: Vec<usize> = rows.iter().copied().filter(|&r| ds.is_available(r, m)).collect();
        if present.len() < 2 {
            return Err(Error::Invalid(format!("modality {m} has fewer than 2 pretraining windows")));
        }
        let signals = ds.column_tensor(m, &present)?;
        let n_tokens = frame_count(signals.dim(1), frame.0, frame.1)?;
        let net = build_backbones(&mut store, nn_cfg, m + 1, n_tokens, seed).pop().expect("one backbone");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + m as u64);
        log.extend(train_backbone(&mut store, &net, &signals, m, frame, cfg, &mut rng)?);
    }
    Ok((store, log))
}

fn train_backbone(
    store: &mut ParamStore,
    net: &NeuroNet,
    signals: &Tensor,
    modality: usize,
    frame: (usize, usize),
    cfg: &DpTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DpEpoch>> {
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let n = signals.dim(0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let x = signals.select(0, chunk);
            let step_seed = rng.random();
            let g = Graph::new();
            let ctx = Ctx::train(&g, store, step_seed);
            let out = dp_forward(&ctx, &ctx, net, &x, frame, cfg, rng)?;
            let vals = [out.recon1.item(), out.recon2.item(), out.ntxent.item(), out.total.item()];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite DP-NeuroNet loss for modality {modality}, epoch {epoch}, batch {bi}: \
                     recon1={} recon2={} ntxent={} total={}",
                    vals[0], vals[1], vals[2], vals[3]
                )));
            }
            let grads = ctx.param_grads(&g.backward(out.total));
            drop(ctx);
            opt.step(store, &grads);
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
            batches += 1;
        }
        let k = batches.max(1) as f64;
        log.push(DpEpoch {
            modality,
            epoch,
            recon1: sums[0] / k,
            recon2: sums[1] / k,
            ntxent: sums[2] / k,
            total: sums[3] / k,
        });
    }
    if !store.all_finite() {
        return Err(Error::Numeric(format!("non-finite parameter after pretraining modality {modality}")));
    }
    Ok(log)
}
