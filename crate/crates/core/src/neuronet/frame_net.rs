use crate::autograd::Var;
use crate::nn::{Conv1d, Ctx, Init, Mlp};

pub const BRANCH_KERNELS: [usize; 3] = [3, 5, 7];
const BLOCKS_PER_BRANCH: usize = 2;

#[derive(Clone, Debug)]
struct ResidualBlock {
    conv1: Conv1d,
    conv2: Conv1d,
}

impl ResidualBlock {
    fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        let h = self.conv1.forward(ctx, x).relu();
        x.add(self.conv2.forward(ctx, h)).relu()
    }
}

/// Multi-scale per-frame feature extractor: a shared convolution, three
/// residual branches with kernels 3, 5 and 7, per-branch global average
/// pooling, concatenation and an MLP to the token dimension.
#[derive(Clone, Debug)]
pub struct FrameNetwork {
    stem: Conv1d,
    branches: Vec<Vec<ResidualBlock>>,
    head: Mlp,
    pub channels: usize,
    pub dim: usize,
}

impl FrameNetwork {
    pub fn new(init: &mut Init<'_>, prefix: &str, channels: usize, dim: usize) -> Self {
        let stem = Conv1d::new(init, &format!("{prefix}/stem"), 1, channels, 3);
        let branches = BRANCH_KERNELS
            .iter()
            .map(|&k| {
                (0..BLOCKS_PER_BRANCH)
                    .map(|j| ResidualBlock {
                        conv1: Conv1d::new(init, &format!("{prefix}/k{k}/{j}/conv1"), channels, channels, k),
                        conv2: Conv1d::new(init, &format!("{prefix}/k{k}/{j}/conv2"), channels, channels, k),
                    })
                    .collect()
            })
            .collect();
        let head = Mlp::new(init, &format!("{prefix}/head"), 3 * channels, dim, dim);
        Self { stem, branches, head, channels, dim }
    }

    /// `[B, N, F]` frames to `[B, N, dim]` tokens; frames never interact.
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, frames: Var<'g>) -> Var<'g> {
        let (b, n, f) = (frames.dim(0), frames.dim(1), frames.dim(2));
        let x = frames.reshape([b * n, 1, f]);
        let shared = self.stem.forward(ctx, x).relu();
        let pooled: Vec<Var<'g>> = self
            .branches
            .iter()
            .map(|blocks| blocks.iter().fold(shared, |h, blk| blk.forward(ctx, h)).mean_axis(2))
            .collect();
        let cat = ctx.graph.concat(&pooled, 1);
        self.head.forward(ctx, cat).reshape([b, n, self.dim])
    }
}
