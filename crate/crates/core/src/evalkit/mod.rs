//! Metrics, subject-group folds, linear probing and missing-modality sweeps.

mod folds;
mod metrics;
mod probe;
mod sweep;

pub use folds::*;
pub use metrics::*;
pub use probe::*;
pub use sweep::*;
