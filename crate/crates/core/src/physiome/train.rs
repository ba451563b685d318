use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Ctx, ParamStore};

use super::loss::{cross_contra_loss, intra_recon_loss, missing_recon_loss, total_loss};
use super::model::{PhysioME, Run};
use super::plan::DropSamplePlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysioMETrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl PhysioMETrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("physiome needs epochs >= 1 and batch_size >= 2".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("physiome lr must be positive and weight decay non-negative".into()));
        }
        Ok(())
    }
}

/// Every loss of one PhysioME forward.
pub struct PhysioMELosses<'g> {
    pub intra: Var<'g>,
    pub missing: Var<'g>,
    pub cross: Var<'g>,
    /// Weighted sum of the three terms above.
    pub total: Var<'g>,
}

/// Scalar snapshot of [`PhysioMELosses`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub l_intra: f64,
    pub l_missing: f64,
    pub l_cross: f64,
    pub total: f64,
}

impl StepMetrics {
    fn of(l: &PhysioMELosses<'_>) -> Self {
        Self {
            l_intra: l.intra.item(),
            l_missing: l.missing.item(),
            l_cross: l.cross.item(),
            total: l.total.item(),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_intra, self.l_missing, self.l_cross, self.total].iter().all(|v| v.is_finite())
    }
}

/// Training forward over cached frame tokens (`frame_tokens[m]`: `[B, N, D_enc]`).
pub fn physiome_forward<'g>(
    ctx: &Ctx<'g, '_>,
    model: &PhysioME,
    frame_tokens: &[Tensor],
    plan: &DropSamplePlan,
) -> Result<PhysioMELosses<'g>> {
    let m_count = model.n_modalities;
    if frame_tokens.len() != m_count || plan.n_modalities() != m_count {
        return Err(Error::Shape(format!("expected {m_count} modalities in tokens and plan")));
    }
    let g = ctx.graph;
    let mut e = Vec::with_capacity(m_count);
    let mut runs = Vec::with_capacity(m_count);
    for (m, ft) in frame_tokens.iter().enumerate() {
        let em = model.encode_modality(ctx, ctx.constant(ft.clone()), m)?;
        runs.push(match plan.kept(m) {
            Some(kept) => Run::Tokens(model.project_tokens(ctx, em, m)?.index_select(1, kept)),
            None => Run::Dropped,
        });
        e.push(em);
    }
    let fused = model.multimodal_encode(ctx, &runs)?;
    let targets: Vec<Var<'g>> = e.iter().map(|v| v.detach()).collect();

    let mut decoded = vec![None; m_count];
    let mut restored = vec![None; m_count];
    for m in 0..m_count {
        match plan.kept(m) {
            Some(kept) => decoded[m] = Some(model.decode_modality(ctx, fused.run(m), kept, m)?),
            None => {
                let run = fused.run(m);
                let run = if model.cfg.restoration_gradient { run } else { run.detach() };
                restored[m] = Some(model.restore_modality(ctx, run, m)?);
            }
        }
    }
    let intra = intra_recon_loss(g, &decoded, &targets, plan)?;
    let missing = missing_recon_loss(g, &restored, &targets, plan)?;
    let em = (0..m_count).map(|m| model.modality_embedding(ctx, e[m], m)).collect::<Result<Vec<_>>>()?;
    let om = model.fused_embedding(ctx, fused.out)?;
    let cross = cross_contra_loss(&em, om, model.cfg.temperature)?;
    let total = total_loss(&model.cfg.loss_weights, intra, missing, cross);
    Ok(PhysioMELosses { intra, missing, cross, total })
}

/// Forward, backward and one optimizer update. Returns the loss breakdown.
pub fn train_step(
    store: &mut ParamStore,
    model: &PhysioME,
    opt: &mut AdamW,
    frame_tokens: &[Tensor],
    plan: &DropSamplePlan,
    dropout_seed: u64,
) -> Result<StepMetrics> {
    let (metrics, grads) = loss_and_grads(store, model, frame_tokens, plan, dropout_seed)?;
    opt.step(store, &grads);
    Ok(metrics)
}

/// Forward and backward without an update.
pub fn loss_and_grads(
    store: &ParamStore,
    model: &PhysioME,
    frame_tokens: &[Tensor],
    plan: &DropSamplePlan,
    dropout_seed: u64,
) -> Result<(StepMetrics, BTreeMap<String, Tensor>)> {
    let g = Graph::new();
    let ctx = Ctx::train(&g, store, dropout_seed);
    let losses = physiome_forward(&ctx, model, frame_tokens, plan)?;
    let metrics = StepMetrics::of(&losses);
    if !metrics.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite PhysioME loss: intra={} missing={} cross={}",
            metrics.l_intra, metrics.l_missing, metrics.l_cross
        )));
    }
    let grads = ctx.param_grads(&g.backward(losses.total));
    Ok((metrics, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhysioMEEpoch {
    pub epoch: usize,
    pub l_intra: f64,
    pub l_missing: f64,
    pub l_cross: f64,
    pub total: f64,
    pub wall_seconds: f64,
}

/// Runs the PhysioME training loop over cached frame tokens
/// (`frame_tokens[m]`: `[rows, N, D_enc]`, all rows complete).
pub fn train_physiome(
    store: &mut ParamStore,
    model: &PhysioME,
    frame_tokens: &[Tensor],
    cfg: &PhysioMETrainConfig,
    seed: u64,
) -> Result<Vec<PhysioMEEpoch>> {
    cfg.validate()?;
    let rows = frame_tokens.first().map_or(0, |t| t.dim(0));
    if rows < 2 {
        return Err(Error::Invalid("PhysioME training needs at least 2 complete rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2000);
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let mut order: Vec<usize> = (0..rows).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<Tensor> = frame_tokens.iter().map(|t| t.select(0, chunk)).collect();
            let plan = DropSamplePlan::sample(
                model.n_modalities,
                model.n_tokens,
                model.cfg.mask_ratio,
                model.cfg.drop_prob,
                &mut rng,
            )?;
            let metrics = train_step(store, model, &mut opt, &batch, &plan, rng.random()).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {bi}: {msg}")),
                other => other,
            })?;
            for (s, v) in sums.iter_mut().zip([metrics.l_intra, metrics.l_missing, metrics.l_cross, metrics.total]) {
                *s += v;
            }
            batches += 1;
        }
        let k = batches.max(1) as f64;
        log.push(PhysioMEEpoch {
            epoch,
            l_intra: sums[0] / k,
            l_missing: sums[1] / k,
            l_cross: sums[2] / k,
            total: sums[3] / k,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}
