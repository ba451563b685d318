use crate::autograd::Tensor;
use crate::error::{Error, Result};

use super::types::{frame_count, FrameSpec, SignalWindow};

/// Splits a window into overlapping frames. Frame `i` covers
/// `[i * step, i * step + frame)`; trailing samples that do not fill a frame
/// are dropped.
pub fn segment_frames(window: &SignalWindow, spec: &FrameSpec) -> Result<Vec<Vec<f64>>> {
    let (frame, step) = spec.in_samples(window.sample_rate_hz)?;
    let n = frame_count(window.len(), frame, step)?;
    Ok((0..n).map(|i| window.samples[i * step..i * step + frame].to_vec()).collect())
}

/// Frames every row of `signals` (`[B, L]`) into `[B, N, frame]`.
pub fn frame_batch(signals: &Tensor, frame: usize, step: usize) -> Result<Tensor> {
    if signals.rank() != 2 {
        return Err(Error::Shape(format!("expected [batch, len], got {:?}", signals.shape())));
    }
    let (b, len) = (signals.dim(0), signals.dim(1));
    let n = frame_count(len, frame, step)?;
    let mut data = Vec::with_capacity(b * n * frame);
    for r in 0..b {
        let row = signals.row(r);
        for i in 0..n {
            data.extend_from_slice(&row[i * step..i * step + frame]);
        }
    }
    Ok(Tensor::new([b, n, frame], data))
}
