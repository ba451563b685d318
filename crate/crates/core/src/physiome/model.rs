use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::neuronet::{l2_normalize, MaskPlan, NeuroNet};
use crate::nn::{sinusoidal_table, Ctx, Init, InitKind, Linear, Mlp, ParamStore, Transformer};

use super::loss::LossWeights;

/// How a dropped modality is represented inside the multimodal encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropTokenMode {
    /// One mask token for the whole run.
    #[default]
    Single,
    /// One mask token per position, each with its positional encoding.
    PerPosition,
}

/// What fills a dropped modality's slot, in training and at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    /// The shared mask token (see [`DropTokenMode`]).
    #[default]
    MaskToken,
    /// A learnable token per modality in place of the shared mask token,
    /// laid out the same way.
    MemoryToken,
}

impl Placeholder {
    pub fn as_str(&self) -> &'static str {
        match self {
            Placeholder::MaskToken => "mask_token",
            Placeholder::MemoryToken => "memory_token",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysioMEConfig {
    pub mm_dim: usize,
    pub mm_depth: usize,
    pub mm_heads: usize,
    pub mod_dec_dim: usize,
    pub mod_dec_depth: usize,
    pub mod_dec_heads: usize,
    pub rest_dec_dim: usize,
    pub rest_dec_depth: usize,
    pub rest_dec_heads: usize,
    pub projection: [usize; 2],
    pub temperature: f64,
    pub mask_ratio: f64,
    pub drop_prob: f64,
    pub loss_weights: LossWeights,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    /// Let the missing-modality loss reach the multimodal encoder.
    pub restoration_gradient: bool,
    pub drop_token_mode: DropTokenMode,
    #[serde(default)]
    pub placeholder: Placeholder,
}

impl PhysioMEConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, dim, heads) in [
            ("multimodal encoder", self.mm_dim, self.mm_heads),
            ("modality decoder", self.mod_dec_dim, self.mod_dec_heads),
            ("restoration decoder", self.rest_dec_dim, self.rest_dec_heads),
        ] {
            if dim == 0 || heads == 0 || dim % heads != 0 {
                return Err(Error::Config(format!("{name} dim {dim} must be a positive multiple of heads {heads}")));
            }
        }
        if self.projection.contains(&0) || self.lora_rank == 0 {
            return Err(Error::Config("projection widths and LoRA rank must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) || !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::Config("mask ratio and drop probability must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) || !(self.temperature > 0.0) {
            return Err(Error::Config("LoRA dropout must be in [0, 1) and temperature positive".into()));
        }
        self.loss_weights.validate()
    }
}

/// Per-modality decoder that fills held-out positions with the mask token
/// and reconstructs the whole run in encoder space.
#[derive(Clone, Debug)]
pub struct ModalityDecoder {
    embed: Linear,
    transformer: Transformer,
    head: Mlp,
    pe: Tensor,
}

impl ModalityDecoder {
    /// `run`: `[B, |kept|, D_mm]` fused tokens at the `kept` positions.
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, run: Var<'g>, kept: &[usize], n: usize, mask: Var<'g>) -> Var<'g> {
        let (b, h, d) = (run.dim(0), run.dim(1), run.dim(2));
        let seq = if h < n {
            let held = crate::neuronet::complement(kept, n);
            let plan = MaskPlan { n, visible: vec![kept.to_vec(); b], masked: vec![held; b] };
            let masks = mask.index_select(0, &vec![0; b * (n - h)]);
            ctx.graph.concat(&[run.reshape([b * h, d]), masks], 0).index_select(0, &plan.unshuffle()).reshape([b, n, d])
        } else {
            run
        };
        let pe = ctx.constant(self.pe.select(0, &(0..n).collect::<Vec<_>>()));
        let x = self.embed.forward(ctx, seq).add(pe);
        self.head.forward(ctx, self.transformer.forward(ctx, x))
    }
}

/// Per-modality decoder mapping a (possibly length-1) fused run to `N`
/// encoder-space tokens through `N` learnable query tokens.
#[derive(Clone, Debug)]
pub struct RestorationDecoder {
    embed: Linear,
    queries: String,
    transformer: Transformer,
    head: Mlp,
    n: usize,
}

impl RestorationDecoder {
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, run: Var<'g>) -> Var<'g> {
        let (b, len) = (run.dim(0), run.dim(1));
        let x = self.embed.forward(ctx, run);
        let q = ctx.param(&self.queries).expand_batch(b);
        let out = self.transformer.forward(ctx, ctx.graph.concat(&[x, q], 1)).narrow(1, len, self.n);
        self.head.forward(ctx, out)
    }
}

/// One modality's slot in the multimodal encoder input.
#[derive(Clone, Copy)]
pub enum Run<'g> {
    Tokens(Var<'g>),
    Dropped,
}

/// Multimodal encoder output with the span each modality occupies.
pub struct Fused<'g> {
    pub out: Var<'g>,
    /// `(start, len)` into `out`'s sequence axis; the class token sits at 0.
    pub spans: Vec<(usize, usize)>,
}

impl<'g> Fused<'g> {
    pub fn run(&self, m: usize) -> Var<'g> {
        let (start, len) = self.spans[m];
        self.out.narrow(1, start, len)
    }

    /// Class-token output, `[B, D_mm]`.
    pub fn class(&self) -> Var<'g> {
        let (b, d) = (self.out.dim(0), self.out.dim(2));
        self.out.narrow(1, 0, 1).reshape([b, d])
    }

    pub fn len(&self) -> usize {
        self.out.dim(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn physiome_prefix(part: &str) -> String {
    format!("physiome/{part}")
}

#[derive(Clone, Debug)]
pub struct PhysioME {
    pub cfg: PhysioMEConfig,
    pub n_modalities: usize,
    pub n_tokens: usize,
    pub enc_dim: usize,
    pub encoders: Vec<NeuroNet>,
    pub input_proj: Vec<Mlp>,
    pub mm_encoder: Transformer,
    pub mask_token: String,
    pub class_token: String,
    pub modality_tokens: Vec<String>,
    pub mod_decoders: Vec<ModalityDecoder>,
    pub rest_decoders: Vec<RestorationDecoder>,
    pub em_heads: Vec<Mlp>,
    pub om_head: Mlp,
    /// Per-modality memory tokens; empty unless trained with memory placeholders.
    pub memory: Vec<String>,
    pe: Tensor,
}

impl PhysioME {
    /// Freezes the backbones' parameters in `store`, attaches LoRA adapters to
    /// their encoders and registers every PhysioME parameter.
    pub fn new(store: &mut ParamStore, backbones: &[NeuroNet], cfg: &PhysioMEConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let first = backbones.first().ok_or_else(|| Error::Invalid("PhysioME needs at least one backbone".into()))?;
        let (n, d_enc) = (first.n_tokens, first.cfg.enc_dim);
        if backbones.iter().any(|b| b.n_tokens != n || b.cfg.enc_dim != d_enc) {
            return Err(Error::Config("all backbones must share token count and encoder width".into()));
        }
        for b in backbones {
            store.set_trainable_prefix(&format!("{}/", b.prefix), false);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(77);
        let mut init = Init::new(store, &mut rng);
        let m_count = backbones.len();
        let d = cfg.mm_dim;
        let encoders = backbones
            .iter()
            .enumerate()
            .map(|(m, b)| {
                let mut enc = b.clone();
                let prefix = physiome_prefix(&format!("modality_enc/{m}/lora"));
                enc.encoder.attach_lora_qv(&mut init, &prefix, cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout);
                enc
            })
            .collect();
        let input_proj = (0..m_count)
            .map(|m| Mlp::new(&mut init, &physiome_prefix(&format!("mm_enc/input/{m}")), d_enc, d, d))
            .collect();
        let mm_encoder = Transformer::new(&mut init, &physiome_prefix("mm_enc"), d, cfg.mm_depth, cfg.mm_heads);
        let mask_token = init.tensor(&physiome_prefix("tokens/mask"), &[1, d], InitKind::Normal(0.02));
        let class_token = init.tensor(&physiome_prefix("tokens/class"), &[1, 1, d], InitKind::Normal(0.02));
        let modality_tokens = (0..m_count)
            .map(|m| init.tensor(&physiome_prefix(&format!("tokens/modality_{m}")), &[1, d], InitKind::Normal(0.02)))
            .collect();
        let mod_decoders = (0..m_count)
            .map(|m| {
                let p = physiome_prefix(&format!("mod_dec/{m}"));
                ModalityDecoder {
                    embed: Linear::new(&mut init, &format!("{p}/embed"), d, cfg.mod_dec_dim),
                    transformer: Transformer::new(&mut init, &p, cfg.mod_dec_dim, cfg.mod_dec_depth, cfg.mod_dec_heads),
                    head: Mlp::new(&mut init, &format!("{p}/head"), cfg.mod_dec_dim, d_enc, d_enc),
                    pe: sinusoidal_table(n, cfg.mod_dec_dim),
                }
            })
            .collect();
        let rest_decoders = (0..m_count)
            .map(|m| {
                let p = physiome_prefix(&format!("rest_dec/{m}"));
                RestorationDecoder {
                    embed: Linear::new(&mut init, &format!("{p}/embed"), d, cfg.rest_dec_dim),
                    queries: init.tensor(&format!("{p}/queries"), &[1, n, cfg.rest_dec_dim], InitKind::Normal(0.02)),
                    transformer: Transformer::new(&mut init, &p, cfg.rest_dec_dim, cfg.rest_dec_depth, cfg.rest_dec_heads),
                    head: Mlp::new(&mut init, &format!("{p}/head"), cfg.rest_dec_dim, d_enc, d_enc),
                    n,
                }
            })
            .collect();
        let [h, o] = cfg.projection;
        let em_heads = (0..m_count)
            .map(|m| Mlp::new(&mut init, &physiome_prefix(&format!("contra/em/{m}")), d_enc, h, o))
            .collect();
        let om_head = Mlp::new(&mut init, &physiome_prefix("contra/om"), d, h, o);
        let with_bank = cfg.placeholder == Placeholder::MemoryToken;
        let memory = (0..m_count)
            .filter(|_| with_bank)
            .map(|m| init.tensor(&physiome_prefix(&format!("memory/{m}")), &[1, d], InitKind::Normal(0.02)))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            n_modalities: m_count,
            n_tokens: n,
            enc_dim: d_enc,
            encoders,
            input_proj,
            mm_encoder,
            mask_token,
            class_token,
            modality_tokens,
            mod_decoders,
            rest_decoders,
            em_heads,
            om_head,
            memory,
            pe: sinusoidal_table(n, d),
        })
    }

    fn check_modality(&self, m: usize) -> Result<()> {
        if m >= self.n_modalities {
            return Err(Error::UnknownModality(m));
        }
        Ok(())
    }

    /// Frozen frame-network tokens of `[B, N, F]` frames for modality `m`.
    pub fn frame_tokens(&self, store: &ParamStore, m: usize, frames: &Tensor) -> Result<Tensor> {
        self.check_modality(m)?;
        let g = Graph::new();
        let ctx = Ctx::eval(&g, store);
        Ok((*self.encoders[m].frame_encode(&ctx, ctx.constant(frames.clone()))?.value()).clone())
    }

    /// Frozen-plus-LoRA encoder tokens `e` (`[B, N, D_enc]`) from frame tokens.
    pub fn encode_modality<'g>(&self, ctx: &Ctx<'g, '_>, frame_tokens: Var<'g>, m: usize) -> Result<Var<'g>> {
        self.check_modality(m)?;
        let n = frame_tokens.dim(1);
        Ok(self.encoders[m].encode_full(ctx, frame_tokens)?.narrow(1, 1, n))
    }

    fn pe_rows(&self, n: usize) -> Result<Tensor> {
        if n > self.n_tokens {
            return Err(Error::Shape(format!("{n} tokens exceed the positional table of {}", self.n_tokens)));
        }
        Ok(self.pe.select(0, &(0..n).collect::<Vec<_>>()))
    }

    /// `MLP(e) + pe + mt^(m)`.
    pub fn project_tokens<'g>(&self, ctx: &Ctx<'g, '_>, e: Var<'g>, m: usize) -> Result<Var<'g>> {
        self.check_modality(m)?;
        let pe = ctx.constant(self.pe_rows(e.dim(1))?);
        Ok(self.input_proj[m].forward(ctx, e).add(pe).add(ctx.param(&self.modality_tokens[m])))
    }

    /// Placeholder run standing in for dropped modality `m`.
    pub fn dropped_run<'g>(&self, ctx: &Ctx<'g, '_>, m: usize, batch: usize) -> Result<Var<'g>> {
        let base = ctx.param(self.placeholder_token(m)?).add(ctx.param(&self.modality_tokens[m]));
        let d = self.cfg.mm_dim;
        Ok(match self.cfg.drop_token_mode {
            DropTokenMode::Single => base.reshape([1, 1, d]).expand_batch(batch),
            DropTokenMode::PerPosition => {
                let n = self.n_tokens;
                base.add(ctx.constant(self.pe_rows(n)?)).reshape([1, n, d]).expand_batch(batch)
            }
        })
    }

    /// Class token followed by every modality's run, through the multimodal encoder.
    pub fn multimodal_encode<'g>(&self, ctx: &Ctx<'g, '_>, runs: &[Run<'g>]) -> Result<Fused<'g>> {
        if runs.len() != self.n_modalities {
            return Err(Error::Shape(format!("{} runs for {} modalities", runs.len(), self.n_modalities)));
        }
        let batch = runs
            .iter()
            .find_map(|r| match r {
                Run::Tokens(v) => Some(v.dim(0)),
                Run::Dropped => None,
            })
            .ok_or(Error::NoObservedModality)?;
        let mut parts = vec![ctx.param(&self.class_token).expand_batch(batch)];
        let mut spans = Vec::with_capacity(runs.len());
        let mut pos = 1;
        for (m, r) in runs.iter().enumerate() {
            let v = match *r {
                Run::Tokens(v) => v,
                Run::Dropped => self.dropped_run(ctx, m, batch)?,
            };
            spans.push((pos, v.dim(1)));
            pos += v.dim(1);
            parts.push(v);
        }
        Ok(Fused { out: self.mm_encoder.forward(ctx, ctx.graph.concat(&parts, 1)), spans })
    }

    pub fn decode_modality<'g>(&self, ctx: &Ctx<'g, '_>, run: Var<'g>, kept: &[usize], m: usize) -> Result<Var<'g>> {
        self.check_modality(m)?;
        if kept.len() != run.dim(1) {
            return Err(Error::Shape(format!("{} kept positions for a run of {}", kept.len(), run.dim(1))));
        }
        let mask = ctx.param(&self.mask_token);
        Ok(self.mod_decoders[m].forward(ctx, run, kept, self.n_tokens, mask))
    }

    pub fn restore_modality<'g>(&self, ctx: &Ctx<'g, '_>, run: Var<'g>, m: usize) -> Result<Var<'g>> {
        self.check_modality(m)?;
        Ok(self.rest_decoders[m].forward(ctx, run))
    }

    fn placeholder_token(&self, m: usize) -> Result<&str> {
        self.check_modality(m)?;
        match self.cfg.placeholder {
            Placeholder::MaskToken => Ok(&self.mask_token),
            Placeholder::MemoryToken => {
                self.memory.get(m).map(String::as_str).ok_or_else(|| Error::Config("model was not trained with memory tokens".into()))
            }
        }
    }

    /// Learned memory token of modality `m`, broadcast to `[batch, 1, D_mm]`.
    pub fn memory_tokens<'g>(&self, ctx: &Ctx<'g, '_>, m: usize, batch: usize) -> Result<Var<'g>> {
        self.check_modality(m)?;
        let name = self.memory.get(m).ok_or_else(|| Error::Config("model was not trained with memory tokens".into()))?;
        Ok(ctx.param(name).reshape([1, 1, self.cfg.mm_dim]).expand_batch(batch))
    }

    /// `MLP(normalize(mean_seq(e)))` for modality `m`.
    pub fn modality_embedding<'g>(&self, ctx: &Ctx<'g, '_>, e: Var<'g>, m: usize) -> Result<Var<'g>> {
        Ok(self.em_heads[m].forward(ctx, l2_normalize(e.mean_axis(1))?))
    }

    /// `MLP(normalize(mean_seq(o)))` over every fused token, class token included.
    pub fn fused_embedding<'g>(&self, ctx: &Ctx<'g, '_>, o: Var<'g>) -> Result<Var<'g>> {
        Ok(self.om_head.forward(ctx, l2_normalize(o.mean_axis(1))?))
    }

    /// Names of the frozen backbone tensors the model reads.
    pub fn is_frozen_backbone(name: &str) -> bool {
        name.starts_with("neuronet/")
    }

    /// Parameters a PhysioME checkpoint needs: encoder-side backbone tensors and everything under `physiome/`.
    pub fn checkpoint_params(&self, store: &ParamStore) -> ParamStore {
        let keep: Vec<String> = self.encoders.iter().flat_map(|e| e.encoder_prefixes()).collect();
        let mut out = store.filter_prefix("physiome/");
        for p in keep {
            out.extend_from(&store.filter_prefix(&p), false);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physiome::fixture::{build, cfg, frames, N};

    #[test]
    fn lora_starts_as_identity() {
        let (store, backbones, model) = build(2, &cfg());
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        for m in 0..2 {
            let ft = ctx.constant(model.frame_tokens(&store, m, &frames(3, m as u64)).unwrap());
            let adapted = model.encode_modality(&ctx, ft, m).unwrap();
            let base = backbones[m].encode_full(&ctx, ft).unwrap().narrow(1, 1, N);
            assert_eq!(adapted.value().data(), base.value().data());
        }
    }

    #[test]
    fn backbone_params_frozen_and_physiome_trainable() {
        let (store, _, _) = build(2, &cfg());
        for (name, p) in store.iter() {
            assert_eq!(p.trainable, !PhysioME::is_frozen_backbone(name), "{name}");
        }
    }

    #[test]
    fn checkpoint_keeps_only_encoder_side() {
        let (store, _, model) = build(2, &cfg());
        let ck = model.checkpoint_params(&store);
        assert!(ck.names().any(|n| n.starts_with("neuronet/0/enc/")));
        assert!(ck.names().any(|n| n.starts_with("neuronet/1/frame/")));
        assert!(!ck.names().any(|n| n.starts_with("neuronet/0/dec") || n.starts_with("neuronet/0/proj")));
        assert!(!ck.names().any(|n| n.starts_with("physiome/memory")));
        let (store, _, model) = build(2, &PhysioMEConfig { placeholder: Placeholder::MemoryToken, ..cfg() });
        assert!(model.checkpoint_params(&store).names().any(|n| n == "physiome/memory/1"));
    }

    #[test]
    fn all_dropped_is_rejected() {
        let (store, _, model) = build(2, &cfg());
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        assert!(matches!(model.multimodal_encode(&ctx, &[Run::Dropped, Run::Dropped]), Err(Error::NoObservedModality)));
    }

    #[test]
    fn mismatched_backbones_are_rejected() {
        let mut store = ParamStore::new();
        let a = crate::dp_neuronet::build_backbones(&mut store, &crate::physiome::fixture::backbone_cfg(), 1, N, 0);
        let b = crate::dp_neuronet::build_backbones(&mut store, &crate::physiome::fixture::backbone_cfg(), 1, N + 1, 0);
        assert!(PhysioME::new(&mut store, &[a[0].clone(), b[0].clone()], &cfg(), 0).is_err());
    }
}
