use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::neuronet::{inter_recon_loss, nt_xent};

use super::plan::DropSamplePlan;

/// Weights of the intra-modality reconstruction, missing-modality
/// reconstruction and cross-modality contrastive terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative with one positive, got {w:?}")));
        }
        Ok(())
    }
}

/// Reconstruction of the held-out positions of every sampled modality.
/// `d[m]` is the decoder output for sampled modalities (`None` if dropped),
/// `e[m]` the target. Modalities with nothing held out are left out of the
/// average; if none remain the loss is 0.
pub fn intra_recon_loss<'g>(g: &'g Graph, d: &[Option<Var<'g>>], e: &[Var<'g>], plan: &DropSamplePlan) -> Result<Var<'g>> {
    let sampled = plan.sampled();
    if sampled.is_empty() {
        return Err(Error::NoObservedModality);
    }
    let mut terms = Vec::new();
    for m in sampled {
        let held = plan.held_out(m).expect("sampled modality");
        if held.is_empty() {
            continue;
        }
        let dm = d[m].ok_or_else(|| Error::Invalid(format!("missing decoder output for modality {m}")))?;
        let b = dm.dim(0);
        terms.push(inter_recon_loss(dm, e[m], &vec![held; b])?);
    }
    Ok(mean_of(g, &terms))
}

/// Restoration error over all positions of every dropped modality; 0 when
/// nothing was dropped. `restored[m]` must be set for dropped modalities.
pub fn missing_recon_loss<'g>(
    g: &'g Graph,
    restored: &[Option<Var<'g>>],
    e: &[Var<'g>],
    plan: &DropSamplePlan,
) -> Result<Var<'g>> {
    let mut terms = Vec::new();
    for m in plan.dropped() {
        let gm = restored[m].ok_or_else(|| Error::Invalid(format!("missing restoration for modality {m}")))?;
        let (b, n) = (gm.dim(0), gm.dim(1));
        terms.push(inter_recon_loss(gm, e[m], &vec![(0..n).collect(); b])?);
    }
    Ok(mean_of(g, &terms))
}

/// Mean over modalities of the NT-Xent between each modality embedding
/// `em[m]` and the fused embedding `om`.
pub fn cross_contra_loss<'g>(em: &[Var<'g>], om: Var<'g>, tau: f64) -> Result<Var<'g>> {
    if em.is_empty() {
        return Err(Error::Invalid("cross-modal contrast needs at least one modality".into()));
    }
    let terms = em.iter().map(|&e| nt_xent(e, om, tau)).collect::<Result<Vec<_>>>()?;
    Ok(mean_of(om.graph(), &terms))
}

pub fn total_loss<'g>(w: &LossWeights, intra: Var<'g>, missing: Var<'g>, cross: Var<'g>) -> Var<'g> {
    intra.scale(w.alpha).add(missing.scale(w.beta)).add(cross.scale(w.gamma))
}

fn mean_of<'g>(g: &'g Graph, terms: &[Var<'g>]) -> Var<'g> {
    match terms.split_first() {
        None => g.scalar(0.0),
        Some((first, rest)) => rest.iter().fold(*first, |acc, &t| acc.add(t)).scale(1.0 / terms.len() as f64),
    }
}
