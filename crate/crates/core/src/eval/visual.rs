use num_traits::Float;
use thiserror::Error;

use super::embed::{EmbedError, EmbeddingProvider};
use super::COMPONENT_MAX;
use crate::mediacheck::{Frame, FrameSet};

/// Reference mean second-difference magnitude; motion at or above it
/// scores zero.
pub const DEFAULT_MOTION_REF: f64 = 0.1;

/// Side of the grayscale grid used for motion; each axis is box-averaged
/// independently.
const MOTION_GRID: u32 = 64;

#[derive(Debug, Error)]
pub enum VisualError {
    #[error("no frames")]
    NoFrames,
    #[error("need at least 3 frames for motion, got {0}")]
    TooFewFrames(usize),
    #[error("frames differ in size")]
    SizeMismatch,
    #[error("reference motion must be positive")]
    BadReference,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Cosine similarity; zero if either vector is zero.
pub fn cosine<T: Float>(a: &[T], b: &[T]) -> T {
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// 25 × clamp(mean cosine between the prompt and each frame, 0, 1).
pub fn score_clip(frames: &FrameSet, prompt: &str, embedder: &dyn EmbeddingProvider) -> Result<f64, VisualError> {
    if frames.is_empty() {
        return Err(VisualError::NoFrames);
    }
    let text = embedder
        .embed_texts(&[prompt.to_string()])?
        .pop()
        .ok_or(EmbedError::CountMismatch { expected: 1, got: 0 })?;
    let images = embedder.embed_images(&frames.frames)?;
    let mean = images.iter().map(|v| cosine(&text, v)).sum::<f64>() / images.len() as f64;
    Ok(COMPONENT_MAX * mean.clamp(0.0, 1.0))
}

/// BT.601 luma, box-averaged onto a grid no larger than 64×64.
fn gray_grid<T: Float>(f: &Frame) -> (usize, usize, Vec<T>) {
    let bw = f.width.div_ceil(MOTION_GRID).max(1);
    let bh = f.height.div_ceil(MOTION_GRID).max(1);
    let gw = f.width.div_ceil(bw) as usize;
    let gh = f.height.div_ceil(bh) as usize;
    let mut sum = vec![0.0f64; gw * gh];
    let mut cnt = vec![0u32; gw * gh];
    for y in 0..f.height {
        for x in 0..f.width {
            let [r, g, b] = f.pixel(x, y);
            let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
            let i = (y / bh) as usize * gw + (x / bw) as usize;
            sum[i] += luma;
            cnt[i] += 1;
        }
    }
    let grid = sum
        .iter()
        .zip(&cnt)
        .map(|(&s, &c)| T::from(s / c.max(1) as f64).unwrap())
        .collect();
    (gw, gh, grid)
}

/// Mean |f(t+1) − 2f(t) + f(t−1)| over all interior frames and cells,
/// normalized to [0, 1] by 255.
pub fn motion_energy<T: Float>(frames: &FrameSet) -> Result<T, VisualError> {
    if frames.len() < 3 {
        return Err(VisualError::TooFewFrames(frames.len()));
    }
    let first = &frames.frames[0];
    if frames
        .frames
        .iter()
        .any(|f| f.width != first.width || f.height != first.height)
    {
        return Err(VisualError::SizeMismatch);
    }
    let grids: Vec<Vec<T>> = frames.frames.iter().map(|f| gray_grid::<T>(f).2).collect();
    let two = T::one() + T::one();
    let mut total = T::zero();
    let mut n = 0usize;
    for w in grids.windows(3) {
        for ((&a, &b), &c) in w[0].iter().zip(&w[1]).zip(&w[2]) {
            total = total + (c - two * b + a).abs();
            n += 1;
        }
    }
    Ok(total / T::from(n).unwrap() / T::from(255.0).unwrap())
}

/// 25 × (1 − clamp(m / m_ref, 0, 1)).
pub fn score_motion(frames: &FrameSet, motion_ref: f64) -> Result<f64, VisualError> {
    if !(motion_ref > 0.0 && motion_ref.is_finite()) {
        return Err(VisualError::BadReference);
    }
    let m: f64 = motion_energy(frames)?;
    Ok(COMPONENT_MAX * (1.0 - (m / motion_ref).clamp(0.0, 1.0)))
}
