//! Run configuration, checkpoints, the staged training pipeline and report rendering.

mod checkpoint;
mod config;
mod pipeline;
mod plots;

pub use checkpoint::*;
pub use config::*;
pub use pipeline::*;
pub use plots::*;

/// Caps worker threads from `PHYSIOME_NUM_THREADS`; a no-op once the pool exists.
pub fn configure_threads() {
    let threads = std::env::var("PHYSIOME_NUM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
