use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamStore};

use super::model::{PhysioME, Placeholder, Run};

/// How a missing modality is handled at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestorationStrategy {
    /// Keep the mask token; no restoration.
    MaskedToken,
    /// Substitute the learned per-modality memory token. Needs a model trained
    /// with memory placeholders.
    MemoryToken,
    /// Reconstruct the tokens with the restoration decoder.
    RestorationDecoder,
}

impl RestorationStrategy {
    pub const ALL: [RestorationStrategy; 3] =
        [RestorationStrategy::MaskedToken, RestorationStrategy::MemoryToken, RestorationStrategy::RestorationDecoder];

    pub fn as_str(&self) -> &'static str {
        match self {
            RestorationStrategy::MaskedToken => "masked_token",
            RestorationStrategy::MemoryToken => "memory_token",
            RestorationStrategy::RestorationDecoder => "restoration_decoder",
        }
    }

    /// The training-time placeholder a model must use for this strategy.
    pub fn placeholder(&self) -> Placeholder {
        match self {
            RestorationStrategy::MemoryToken => Placeholder::MemoryToken,
            _ => Placeholder::MaskToken,
        }
    }
}

impl fmt::Display for RestorationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RestorationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown restoration strategy {s:?}")))
    }
}

/// Which modalities are observed. Written as a bit string where character
/// `i` is modality `i`: `"101"` observes modalities 0 and 2.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScenarioMask {
    observed: Vec<bool>,
}

impl ScenarioMask {
    pub fn new(observed: Vec<bool>) -> Result<Self> {
        if !observed.iter().any(|&o| o) {
            return Err(Error::NoObservedModality);
        }
        Ok(Self { observed })
    }

    pub fn full(m: usize) -> Self {
        Self { observed: vec![true; m] }
    }

    pub fn parse(bits: &str, m: usize) -> Result<Self> {
        if bits.len() != m || !bits.chars().all(|c| c == '0' || c == '1') {
            return Err(Error::Config(format!("modality mask {bits:?} must be {m} characters of 0/1")));
        }
        Self::new(bits.chars().map(|c| c == '1').collect())
    }

    pub fn bits(&self) -> String {
        self.observed.iter().map(|&o| if o { '1' } else { '0' }).collect()
    }

    pub fn n_modalities(&self) -> usize {
        self.observed.len()
    }

    pub fn is_observed(&self, m: usize) -> bool {
        self.observed[m]
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&m| self.observed[m]).collect()
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&m| !self.observed[m]).collect()
    }

    pub fn is_full(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    /// Every non-empty observed subset: full first, then by decreasing
    /// observed count, ties in descending bit-string order.
    pub fn all(m: usize) -> Vec<ScenarioMask> {
        let mut out: Vec<ScenarioMask> = (1u32..(1 << m))
            .map(|code| ScenarioMask { observed: (0..m).map(|i| code & (1 << (m - 1 - i)) != 0).collect() })
            .collect();
        out.sort_by(|a, b| b.observed().len().cmp(&a.observed().len()).then_with(|| b.bits().cmp(&a.bits())));
        out
    }
}

impl fmt::Display for ScenarioMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bits())
    }
}

/// Result of the missing-modality inference procedure.
pub struct Fusion<'g> {
    /// Final fused token sequence, class token first.
    pub tokens: Var<'g>,
    /// Class-token representation, `[B, D_mm]`.
    pub class: Var<'g>,
    pub first_pass_len: usize,
    /// Length of the second pass when one ran.
    pub second_pass_len: Option<usize>,
    /// Per missing modality: the restoration decoder's encoder-space tokens,
    /// or the memory token that stood in for it.
    pub restored: Vec<Option<Var<'g>>>,
}

/// Encodes the observed modalities and fuses them with the model's
/// placeholders at the missing slots. Under the restoration decoder the
/// missing runs are then restored and fused again; with nothing missing a
/// single pass runs.
/// `frame_tokens[m]` must be present for every observed `m`.
pub fn infer_fusion<'g>(
    ctx: &Ctx<'g, '_>,
    model: &PhysioME,
    frame_tokens: &[Option<Tensor>],
    scenario: &ScenarioMask,
    strategy: RestorationStrategy,
) -> Result<Fusion<'g>> {
    let m_count = model.n_modalities;
    if scenario.n_modalities() != m_count || frame_tokens.len() != m_count {
        return Err(Error::Shape(format!("scenario and tokens must cover {m_count} modalities")));
    }
    if !scenario.is_full() && strategy.placeholder() != model.cfg.placeholder {
        return Err(Error::Config(format!(
            "strategy {strategy} needs a model trained with {} placeholders, not {}",
            strategy.placeholder().as_str(),
            model.cfg.placeholder.as_str()
        )));
    }
    let mut z = vec![None; m_count];
    for m in scenario.observed() {
        let ft = frame_tokens[m].as_ref().ok_or_else(|| Error::Invalid(format!("observed modality {m} has no data")))?;
        let e = model.encode_modality(ctx, ctx.constant(ft.clone()), m)?;
        z[m] = Some(model.project_tokens(ctx, e, m)?);
    }
    let runs: Vec<Run<'g>> = z.iter().map(|v| v.map_or(Run::Dropped, Run::Tokens)).collect();
    let first = model.multimodal_encode(ctx, &runs)?;
    let first_pass_len = first.len();
    let single = |fused: super::model::Fused<'g>, second: Option<usize>, restored| Fusion {
        class: fused.class(),
        tokens: fused.out,
        first_pass_len,
        second_pass_len: second,
        restored,
    };
    if scenario.is_full() || strategy == RestorationStrategy::MaskedToken {
        return Ok(single(first, None, vec![None; m_count]));
    }
    if strategy == RestorationStrategy::MemoryToken {
        let batch = first.out.dim(0);
        let bank = (0..m_count)
            .map(|m| if scenario.is_observed(m) { Ok(None) } else { model.memory_tokens(ctx, m, batch).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        return Ok(single(first, None, bank));
    }
    let mut restored = vec![None; m_count];
    let mut runs = runs;
    for m in scenario.missing() {
        let g = model.restore_modality(ctx, first.run(m), m)?;
        runs[m] = Run::Tokens(model.project_tokens(ctx, g, m)?);
        restored[m] = Some(g);
    }
    let second = model.multimodal_encode(ctx, &runs)?;
    let len = second.len();
    Ok(single(second, Some(len), restored))
}

/// Class-token features for `rows`, computed in eval mode in chunks of `chunk`.
/// `frame_tokens[m]`: `[all_rows, N, D_enc]`; unobserved modalities are never read.
pub fn class_features(
    store: &ParamStore,
    model: &PhysioME,
    frame_tokens: &[Tensor],
    rows: &[usize],
    scenario: &ScenarioMask,
    strategy: RestorationStrategy,
    chunk: usize,
) -> Result<Tensor> {
    let d = model.cfg.mm_dim;
    let mut out = Vec::with_capacity(rows.len() * d);
    for part in rows.chunks(chunk.max(1)) {
        let ft: Vec<Option<Tensor>> = (0..model.n_modalities)
            .map(|m| scenario.is_observed(m).then(|| frame_tokens[m].select(0, part)))
            .collect();
        let g = Graph::new();
        let ctx = Ctx::eval(&g, store);
        let fusion = infer_fusion(&ctx, model, &ft, scenario, strategy)?;
        out.extend_from_slice(fusion.class.value().data());
    }
    Ok(Tensor::new([rows.len(), d], out))
}

/// Mean over rows and positions of `‖g_i − e_i‖²` for each missing modality,
/// where `e` comes from running the real encoder on the held-out data.
/// The placeholder strategies compare their bare token against `e` and need
/// `D_mm == D_enc`.
pub fn restoration_error(
    store: &ParamStore,
    model: &PhysioME,
    frame_tokens: &[Tensor],
    rows: &[usize],
    scenario: &ScenarioMask,
    strategy: RestorationStrategy,
    chunk: usize,
) -> Result<Vec<(usize, f64)>> {
    let missing = scenario.missing();
    if strategy != RestorationStrategy::RestorationDecoder && model.cfg.mm_dim != model.enc_dim {
        return Err(Error::Config("placeholder restoration error needs equal multimodal and encoder widths".into()));
    }
    let mut sums = vec![0.0; missing.len()];
    for part in rows.chunks(chunk.max(1)) {
        let ft: Vec<Option<Tensor>> = frame_tokens.iter().map(|t| Some(t.select(0, part))).collect();
        let g = Graph::new();
        let ctx = Ctx::eval(&g, store);
        let fusion = infer_fusion(&ctx, model, &ft, scenario, strategy)?;
        for (k, &m) in missing.iter().enumerate() {
            let e = model.encode_modality(&ctx, ctx.constant(ft[m].clone().expect("all present")), m)?;
            let restored = match fusion.restored[m] {
                Some(v) => v,
                None => ctx.param(&model.mask_token).reshape([1, 1, model.enc_dim]).index_select(0, &vec![0; part.len()]),
            };
            let err = restored.sub(e).sqr().sum_axis(2).mean_axis(1).sum_all();
            sums[k] += err.item();
        }
    }
    let n = rows.len().max(1) as f64;
    Ok(missing.into_iter().zip(sums).map(|(m, s)| (m, s / n)).collect())
}
