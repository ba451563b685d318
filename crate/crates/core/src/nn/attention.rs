use crate::autograd::Var;

use super::layers::{LayerNorm, Linear, Mlp};
use super::params::{Ctx, Init};

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init<'_>, prefix: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(init, &format!("{prefix}/q"), dim, dim),
            k: Linear::new(init, &format!("{prefix}/k"), dim, dim),
            v: Linear::new(init, &format!("{prefix}/v"), dim, dim),
            out: Linear::new(init, &format!("{prefix}/out"), dim, dim),
            heads,
            dim,
        }
    }

    /// `x`: `[b, t, dim]` -> `[b * heads, t, dim / heads]`
    fn split_heads<'g>(&self, x: Var<'g>) -> Var<'g> {
        let (b, t) = (x.dim(0), x.dim(1));
        let dh = self.dim / self.heads;
        x.reshape([b, t, self.heads, dh]).permute(&[0, 2, 1, 3]).reshape([b * self.heads, t, dh])
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        let (b, t) = (x.dim(0), x.dim(1));
        let dh = self.dim / self.heads;
        let q = self.split_heads(self.q.forward(ctx, x));
        let k = self.split_heads(self.k.forward(ctx, x));
        let v = self.split_heads(self.v.forward(ctx, x));
        let attn = q.matmul(k.t()).scale(1.0 / (dh as f64).sqrt()).softmax();
        let o = attn
            .matmul(v)
            .reshape([b, self.heads, t, dh])
            .permute(&[0, 2, 1, 3])
            .reshape([b, t, self.dim]);
        self.out.forward(ctx, o)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(init: &mut Init<'_>, prefix: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        Self {
            ln1: LayerNorm::new(init, &format!("{prefix}/ln1"), dim),
            attn: MultiHeadAttention::new(init, &format!("{prefix}/attn"), dim, heads),
            ln2: LayerNorm::new(init, &format!("{prefix}/ln2"), dim),
            mlp: Mlp::new(init, &format!("{prefix}/mlp"), dim, dim * mlp_ratio, dim),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        let x = x.add(self.attn.forward(ctx, self.ln1.forward(ctx, x)));
        x.add(self.mlp.forward(ctx, self.ln2.forward(ctx, x)))
    }
}

/// Stack of [`TransformerBlock`]s followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    pub dim: usize,
}

impl Transformer {
    pub const MLP_RATIO: usize = 2;

    pub fn new(init: &mut Init<'_>, prefix: &str, dim: usize, depth: usize, heads: usize) -> Self {
        let blocks = (0..depth)
            .map(|i| TransformerBlock::new(init, &format!("{prefix}/blocks/{i}"), dim, heads, Self::MLP_RATIO))
            .collect();
        Self { blocks, norm: LayerNorm::new(init, &format!("{prefix}/norm"), dim), dim }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, mut x: Var<'g>) -> Var<'g> {
        for block in &self.blocks {
            x = block.forward(ctx, x);
        }
        self.norm.forward(ctx, x)
    }

    /// Attaches LoRA adapters to the query and value projections of every block.
    pub fn attach_lora_qv(&mut self, init: &mut Init<'_>, prefix: &str, rank: usize, alpha: f64, dropout: f64) {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.attn.q.attach_lora(init, &format!("{prefix}/blocks/{i}/attn/q"), rank, alpha, dropout);
            block.attn.v.attach_lora(init, &format!("{prefix}/blocks/{i}/attn/v"), rank, alpha, dropout);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Graph, Tensor};
    use crate::nn::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_rows_match_reference_loop() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mha = MultiHeadAttention::new(&mut Init::new(&mut store, &mut rng), "a", 4, 2);
        let x = Tensor::new([1, 3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        let got = mha.forward(&ctx, ctx.constant(x.clone())).value();

        let proj = |name: &str| -> Vec<Vec<f64>> {
            let w = store.value(&format!("a/{name}/w"));
            let b = store.value(&format!("a/{name}/b"));
            (0..3)
                .map(|t| (0..4).map(|o| b.data()[o] + (0..4).map(|i| x.data()[t * 4 + i] * w.data()[i * 4 + o]).sum::<f64>()).collect())
                .collect()
        };
        let (q, k, v) = (proj("q"), proj("k"), proj("v"));
        let mut concat = vec![vec![0.0; 4]; 3];
        for h in 0..2 {
            for t in 0..3 {
                let scores: Vec<f64> = (0..3)
                    .map(|s| (0..2).map(|d| q[t][h * 2 + d] * k[s][h * 2 + d]).sum::<f64>() / 2f64.sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for d in 0..2 {
                    concat[t][h * 2 + d] = (0..3).map(|s| (scores[s] - m).exp() / z * v[s][h * 2 + d]).sum();
                }
            }
        }
        let w = store.value("a/out/w");
        let b = store.value("a/out/b");
        for t in 0..3 {
            for o in 0..4 {
                let want = b.data()[o] + (0..4).map(|i| concat[t][i] * w.data()[i * 4 + o]).sum::<f64>();
                assert!((want - got.data()[t * 4 + o]).abs() < 1e-12);
            }
        }
    }
}
