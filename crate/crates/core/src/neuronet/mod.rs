//! Per-modality NeuroNet backbone: frame network, masked encoder/decoder and losses.

mod frame_net;
mod loss;
mod mask;
mod model;

pub use frame_net::{FrameNetwork, BRANCH_KERNELS};
pub use loss::{inter_recon_loss, l2_normalize, neuronet_total_loss, nt_xent};
pub use mask::{complement, visible_count, MaskPlan};
pub use model::{NeuroNet, NeuroNetConfig, NeuroNetLosses};
