//! Signal windows, framing, synthetic data, filtering and the container format.

mod container;
mod filter;
mod frames;
mod synthetic;
mod types;

pub use container::{
    dataset_from_container, dataset_to_container, read_container, read_dataset, write_container, write_dataset,
    Container, NamedTensor, TensorData, MAGIC, VERSION,
};
pub use filter::bandpass_filter;
pub use frames::{frame_batch, segment_frames};
pub use synthetic::{generate_synthetic_dataset, SyntheticConfig};
pub use types::{frame_count, FrameSpec, ModalityBatch, SignalWindow};
