use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_table, Ctx, Init, InitKind, Linear, Mlp, Transformer};

use super::frame_net::FrameNetwork;
use super::loss::{inter_recon_loss, neuronet_total_loss, nt_xent};
use super::mask::MaskPlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuroNetConfig {
    pub frame_channels: usize,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    /// Hidden and output width of the contrastive projection head.
    pub projection: [usize; 2],
    pub mask_ratio: f64,
    pub temperature: f64,
    /// Weight of the contrastive term against the reconstruction terms.
    pub alpha: f64,
}

impl NeuroNetConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, dim, heads) in [("encoder", self.enc_dim, self.enc_heads), ("decoder", self.dec_dim, self.dec_heads)] {
            if dim == 0 || heads == 0 || dim % heads != 0 {
                return Err(Error::Config(format!("{name} dim {dim} must be a positive multiple of heads {heads}")));
            }
        }
        if self.frame_channels == 0 || self.projection.contains(&0) {
            return Err(Error::Config("frame channels and projection widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask ratio must be in [0, 1), got {}", self.mask_ratio)));
        }
        if !(self.temperature > 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::Config("temperature must be positive and alpha non-negative".into()));
        }
        Ok(())
    }
}

/// One modality's NeuroNet: frame network, ViT encoder with class token,
/// masked-token decoder and contrastive projection head. All parameter names
/// live under `prefix`.
#[derive(Clone, Debug)]
pub struct NeuroNet {
    pub cfg: NeuroNetConfig,
    pub prefix: String,
    pub n_tokens: usize,
    pub frame_net: FrameNetwork,
    pub encoder: Transformer,
    pub cls: String,
    pub dec_embed: Linear,
    pub dec_mask: String,
    pub decoder: Transformer,
    pub dec_out: Linear,
    pub proj: Mlp,
    pe_enc: Tensor,
    pe_dec: Tensor,
}

/// Loss breakdown of one NeuroNet forward.
pub struct NeuroNetLosses<'g> {
    pub recon1: Var<'g>,
    pub recon2: Var<'g>,
    pub contrastive: Var<'g>,
    pub total: Var<'g>,
}

impl NeuroNet {
    pub fn new(init: &mut Init<'_>, prefix: &str, cfg: &NeuroNetConfig, n_tokens: usize) -> Self {
        let d = cfg.enc_dim;
        Self {
            cfg: cfg.clone(),
            prefix: prefix.to_string(),
            n_tokens,
            frame_net: FrameNetwork::new(init, &format!("{prefix}/frame"), cfg.frame_channels, d),
            encoder: Transformer::new(init, &format!("{prefix}/enc"), d, cfg.enc_depth, cfg.enc_heads),
            cls: init.tensor(&format!("{prefix}/enc/cls"), &[1, 1, d], InitKind::Normal(0.02)),
            dec_embed: Linear::new(init, &format!("{prefix}/dec/embed"), d, cfg.dec_dim),
            dec_mask: init.tensor(&format!("{prefix}/dec/mask"), &[1, cfg.dec_dim], InitKind::Normal(0.02)),
            decoder: Transformer::new(init, &format!("{prefix}/dec"), cfg.dec_dim, cfg.dec_depth, cfg.dec_heads),
            dec_out: Linear::new(init, &format!("{prefix}/dec/out"), cfg.dec_dim, d),
            proj: Mlp::new(init, &format!("{prefix}/proj"), d, cfg.projection[0], cfg.projection[1]),
            pe_enc: sinusoidal_table(n_tokens, d),
            pe_dec: sinusoidal_table(n_tokens, cfg.dec_dim),
        }
    }

    /// Name prefix of the encoder-side parameters (frame network, transformer, class token).
    pub fn encoder_prefixes(&self) -> [String; 2] {
        [format!("{}/frame/", self.prefix), format!("{}/enc/", self.prefix)]
    }

    pub fn frame_encode<'g>(&self, ctx: &Ctx<'g, '_>, frames: Var<'g>) -> Result<Var<'g>> {
        if frames.shape().len() != 3 || frames.dim(1) == 0 {
            return Err(Error::Shape(format!("expected [batch, frames, frame_len], got {:?}", frames.shape())));
        }
        if !frames.value().is_finite() {
            return Err(Error::Numeric("non-finite value in frame input".into()));
        }
        Ok(self.frame_net.forward(ctx, frames))
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n > self.n_tokens {
            return Err(Error::Shape(format!("{n} tokens exceed the positional table of {}", self.n_tokens)));
        }
        Ok(())
    }

    /// Encodes the visible tokens of `tokens` (`[B, N, D]`) under `plan`.
    /// Returns `[B, 1 + |V|, D]` with the class token first.
    pub fn encode_visible<'g>(&self, ctx: &Ctx<'g, '_>, tokens: Var<'g>, plan: &MaskPlan) -> Result<Var<'g>> {
        let (b, n, d) = (tokens.dim(0), tokens.dim(1), tokens.dim(2));
        self.check_len(n)?;
        let pe = ctx.constant(self.pe_enc.select(0, &(0..n).collect::<Vec<_>>()));
        let mut x = tokens.add(pe);
        if plan.n_visible() < n {
            x = x.reshape([b * n, d]).index_select(0, &plan.flat_visible()).reshape([b, plan.n_visible(), d]);
        }
        let cls = ctx.param(&self.cls).expand_batch(b);
        Ok(self.encoder.forward(ctx, ctx.graph.concat(&[cls, x], 1)))
    }

    /// Unmasked encoder pass, `[B, 1 + N, D]`.
    pub fn encode_full<'g>(&self, ctx: &Ctx<'g, '_>, tokens: Var<'g>) -> Result<Var<'g>> {
        self.encode_visible(ctx, tokens, &MaskPlan::full(tokens.dim(0), tokens.dim(1)))
    }

    /// Reconstructs all `N` positions from an encoder output and its plan.
    pub fn decode<'g>(&self, ctx: &Ctx<'g, '_>, latent: Var<'g>, plan: &MaskPlan) -> Var<'g> {
        let (b, n, nv) = (latent.dim(0), plan.n, plan.n_visible());
        let dd = self.cfg.dec_dim;
        let h = self.dec_embed.forward(ctx, latent);
        let cls = h.narrow(1, 0, 1);
        let vis = h.narrow(1, 1, nv).reshape([b * nv, dd]);
        let body = if nv < n {
            let masks = ctx.param(&self.dec_mask).index_select(0, &vec![0; b * (n - nv)]);
            ctx.graph.concat(&[vis, masks], 0).index_select(0, &plan.unshuffle())
        } else {
            vis
        };
        let pe = ctx.constant(self.pe_dec.select(0, &(0..n).collect::<Vec<_>>()));
        let body = body.reshape([b, n, dd]).add(pe);
        let out = self.decoder.forward(ctx, ctx.graph.concat(&[cls, body], 1));
        self.dec_out.forward(ctx, out.narrow(1, 1, n))
    }

    /// Masked prediction: samples a plan, encodes the visible tokens and
    /// decodes every position. Returns `(plan, reconstruction, latent)`.
    pub fn masked_predict<'g>(
        &self,
        ctx: &Ctx<'g, '_>,
        tokens: Var<'g>,
        ratio: f64,
        rng: &mut impl Rng,
    ) -> Result<(MaskPlan, Var<'g>, Var<'g>)> {
        let plan = MaskPlan::sample(tokens.dim(0), tokens.dim(1), ratio, rng)?;
        let latent = self.encode_visible(ctx, tokens, &plan)?;
        let r = self.decode(ctx, latent, &plan);
        Ok((plan, r, latent))
    }

    /// Mean of the encoder output tokens, class token excluded: `[B, D]`.
    pub fn pool(latent: Var<'_>) -> Var<'_> {
        let len = latent.dim(1);
        latent.narrow(1, 1, len - 1).mean_axis(1)
    }

    pub fn project<'g>(&self, ctx: &Ctx<'g, '_>, pooled: Var<'g>) -> Var<'g> {
        self.proj.forward(ctx, pooled)
    }

    /// Two independent masked predictions over the same tokens plus NT-Xent
    /// between their pooled projections.
    pub fn losses<'g>(&self, ctx: &Ctx<'g, '_>, tokens: Var<'g>, rng: &mut impl Rng) -> Result<NeuroNetLosses<'g>> {
        let target = tokens.detach();
        let (p1, r1, l1) = self.masked_predict(ctx, tokens, self.cfg.mask_ratio, rng)?;
        let (p2, r2, l2) = self.masked_predict(ctx, tokens, self.cfg.mask_ratio, rng)?;
        let recon1 = inter_recon_loss(r1, target, &p1.masked)?;
        let recon2 = inter_recon_loss(r2, target, &p2.masked)?;
        let zi = self.project(ctx, Self::pool(l1));
        let zj = self.project(ctx, Self::pool(l2));
        let contrastive = nt_xent(zi, zj, self.cfg.temperature)?;
        let total = neuronet_total_loss(recon1, recon2, contrastive, self.cfg.alpha);
        Ok(NeuroNetLosses { recon1, recon2, contrastive, total })
    }
}
