use crate::autograd::{Tensor, Var};

use super::params::{Ctx, Init, InitKind};

/// Low-rank additive adapter attached to a [`Linear`]: `y += (alpha / r) · dropout(x) A B`.
#[derive(Clone, Debug)]
pub struct Lora {
    pub a: String,
    pub b: String,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl Lora {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub d_in: usize,
    pub d_out: usize,
    pub lora: Option<Lora>,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, prefix: &str, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = init.tensor(&format!("{prefix}/w"), &[d_in, d_out], InitKind::Uniform(bound));
        let bias = init.tensor(&format!("{prefix}/b"), &[d_out], InitKind::Uniform(bound));
        Self { weight, bias, d_in, d_out, lora: None }
    }

    /// Attaches a LoRA adapter whose parameters live under `prefix`. `B` starts at
    /// zero so the adapted layer initially reproduces the base layer exactly.
    pub fn attach_lora(&mut self, init: &mut Init<'_>, prefix: &str, rank: usize, alpha: f64, dropout: f64) {
        let bound = 1.0 / (self.d_in as f64).sqrt();
        let a = init.tensor(&format!("{prefix}/a"), &[self.d_in, rank], InitKind::Uniform(bound));
        let b = init.tensor(&format!("{prefix}/b"), &[rank, self.d_out], InitKind::Zeros);
        self.lora = Some(Lora { a, b, rank, alpha, dropout });
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        let base = x.matmul(ctx.param(&self.weight)).add(ctx.param(&self.bias));
        match &self.lora {
            None => base,
            Some(l) => {
                let h = ctx.dropout(x, l.dropout);
                let delta = h.matmul(ctx.param(&l.a)).matmul(ctx.param(&l.b)).scale(l.scale());
                base.add(delta)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(init: &mut Init<'_>, prefix: &str, dim: usize) -> Self {
        let gamma = init.tensor(&format!("{prefix}/gamma"), &[dim], InitKind::Ones);
        let beta = init.tensor(&format!("{prefix}/beta"), &[dim], InitKind::Zeros);
        Self { gamma, beta }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.layer_norm(Self::EPS).mul(ctx.param(&self.gamma)).add(ctx.param(&self.beta))
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init<'_>, prefix: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            fc1: Linear::new(init, &format!("{prefix}/fc1"), d_in, hidden),
            fc2: Linear::new(init, &format!("{prefix}/fc2"), hidden, d_out),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        self.fc2.forward(ctx, self.fc1.forward(ctx, x).gelu())
    }

    pub fn d_out(&self) -> usize {
        self.fc2.d_out
    }
}

/// 1-D convolution over `[batch, channels, length]`, "same" padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: String,
    pub bias: String,
    pub c_out: usize,
}

impl Conv1d {
    pub fn new(init: &mut Init<'_>, prefix: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        let bound = (1.0 / (c_in * kernel) as f64).sqrt();
        let weight = init.tensor(&format!("{prefix}/w"), &[c_out, c_in, kernel], InitKind::Uniform(bound));
        let bias = init.tensor(&format!("{prefix}/b"), &[c_out, 1], InitKind::Uniform(bound));
        Self { weight, bias, c_out }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.conv1d(ctx.param(&self.weight)).add(ctx.param(&self.bias))
    }
}

/// Fixed sinusoidal position table, `[positions, dim]`.
pub fn sinusoidal_table(positions: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; positions * dim];
    for pos in 0..positions {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![positions, dim], data)
}
