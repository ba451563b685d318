//! Missing-modality-robust multimodal model built on frozen per-modality backbones.

mod inference;
mod loss;
mod model;
mod plan;
mod train;

pub use inference::*;
pub use loss::*;
pub use model::*;
pub use plan::*;
pub use train::*;
