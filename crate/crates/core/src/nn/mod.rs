//! Neural-network building blocks on top of [`crate::autograd`].

mod attention;
mod layers;
mod optim;
mod params;

pub use attention::{MultiHeadAttention, Transformer, TransformerBlock};
pub use layers::{sinusoidal_table, Conv1d, LayerNorm, Linear, Lora, Mlp};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Ctx, Init, InitKind, Param, ParamStore};
