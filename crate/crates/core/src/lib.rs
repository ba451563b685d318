pub mod app;
pub mod autograd;
pub mod dp_neuronet;
pub mod error;
pub mod evalkit;
pub mod neuronet;
pub mod nn;
pub mod physiome;
pub mod signal;

pub use error::{Error, Result};
