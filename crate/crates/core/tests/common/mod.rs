//! Miniature models shared by the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod oracles;

use physiome::autograd::Tensor;
use physiome::dp_neuronet::build_backbones;
use physiome::neuronet::{NeuroNet, NeuroNetConfig};
use physiome::nn::ParamStore;
use physiome::physiome::{DropTokenMode, LossWeights, PhysioME, PhysioMEConfig, Placeholder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N: usize = 5;
pub const FRAME: usize = 8;

pub fn backbone_cfg() -> NeuroNetConfig {
    NeuroNetConfig {
        frame_channels: 2,
        enc_dim: 8,
        enc_depth: 1,
        enc_heads: 2,
        dec_dim: 8,
        dec_depth: 1,
        dec_heads: 2,
        projection: [8, 4],
        mask_ratio: 0.5,
        temperature: 0.5,
        alpha: 1.0,
    }
}

pub fn physiome_cfg() -> PhysioMEConfig {
    PhysioMEConfig {
        mm_dim: 8,
        mm_depth: 1,
        mm_heads: 2,
        mod_dec_dim: 8,
        mod_dec_depth: 1,
        mod_dec_heads: 2,
        rest_dec_dim: 8,
        rest_dec_depth: 1,
        rest_dec_heads: 2,
        projection: [8, 4],
        temperature: 0.5,
        mask_ratio: 0.4,
        drop_prob: 0.3,
        loss_weights: LossWeights::default(),
        lora_rank: 2,
        lora_alpha: 4.0,
        lora_dropout: 0.0,
        restoration_gradient: false,
        drop_token_mode: DropTokenMode::Single,
        placeholder: Placeholder::MaskToken,
    }
}

pub fn frames(b: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new([b, N, FRAME], (0..b * N * FRAME).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn physiome(m: usize, cfg: &PhysioMEConfig) -> (ParamStore, Vec<NeuroNet>, PhysioME) {
    let mut store = ParamStore::new();
    let backbones = build_backbones(&mut store, &backbone_cfg(), m, N, 1);
    let model = PhysioME::new(&mut store, &backbones, cfg, 2).unwrap();
    (store, backbones, model)
}

/// Frozen frame tokens for `b` random samples of every modality.
pub fn tokens(store: &ParamStore, model: &PhysioME, b: usize, seed: u64) -> Vec<Tensor> {
    (0..model.n_modalities).map(|m| model.frame_tokens(store, m, &frames(b, seed + m as u64)).unwrap()).collect()
}

/// A full run configuration small enough to train end to end in seconds.
pub const TINY_TOML: &str = r#"
preset = "synthetic"
seed = 3
output_dir = "runs/tiny"

[data.synthetic]
n_subjects = 10
n_samples = 120
window_sec = 3.0
seed = 3

[backbone]
frame_channels = 2
enc_dim = 8
enc_heads = 2
enc_depth = 1
dec_dim = 8
dec_heads = 2
projection = [8, 4]

[dp]
epochs = 1
batch_size = 16

[physiome]
mm_dim = 8
mm_depth = 1
mm_heads = 2
mod_dec_dim = 8
mod_dec_heads = 2
rest_dec_dim = 8
rest_dec_depth = 1
rest_dec_heads = 2
projection = [8, 4]

[physiome_train]
epochs = 1
batch_size = 16

[probe]
epochs = 5
"#;

/// Writes [`TINY_TOML`] into `dir` and returns its path.
pub fn write_tiny_config(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY_TOML).unwrap();
    path
}
