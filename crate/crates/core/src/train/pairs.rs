//! Input/target frame pairs one second apart.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePair {
    pub video: usize,
    pub input: usize,
    pub target: usize,
}

/// Frames per second rounded half up.
pub fn frame_gap(fps: f64) -> Result<usize> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Data(format!("fps must be positive, got {fps}")));
    }
    Ok((fps + 0.5).floor() as usize)
}

/// Pairs `(i, i + gap)` for every valid `i`, in order. Too-short videos give none.
pub fn build_frame_pairs(video: usize, frames: usize, fps: f64) -> Result<Vec<FramePair>> {
    let gap = frame_gap(fps)?;
    Ok((0..frames.saturating_sub(gap)).map(|i| FramePair { video, input: i, target: i + gap }).collect())
}
