//! Toy-scale multi-rate streaming encoder.
//!
//! 100 Hz features are subsampled to the 50 Hz base rate and run through a
//! U-Net of stacks at 50, 25, 12.5, 6.25, 12.5 and 25 Hz. Each stack owns
//! blocks whose attention weights are computed once and shared by a
//! nonlinear-attention module and two self-attention modules.

pub mod attention;
pub mod config;
pub mod features;
pub(crate) mod model;
pub mod zsf;

pub use attention::{
    attention_backward, masked_attention, scaled_masked_attention, AttentionGradients,
    AttentionOutput, AttentionParams,
};
pub use config::{EncoderConfig, StackConfig};
pub use features::{extract_features, FeatureStream};
pub use model::Encoder;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const BASE_RATE_HZ: f64 = 50.0;
pub const OUTPUT_RATE_HZ: f64 = 25.0;

/// Acoustic feature frames, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Matrix<f32>,
    frame_rate_hz: f64,
}

impl FeatureSequence {
    pub fn new(frames: Matrix<f32>, frame_rate_hz: f64) -> Result<Self> {
        if !frames.is_finite() {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self {
            frames,
            frame_rate_hz,
        })
    }

    /// 100 Hz features, the encoder input rate.
    pub fn at_input_rate(frames: Matrix<f32>) -> Result<Self> {
        Self::new(frames, features::FEATURE_RATE_HZ)
    }

    pub fn frames(&self) -> &Matrix<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix<f32> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frame_duration_ms(&self) -> f64 {
        1000.0 / self.frame_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.frame_rate_hz
    }
}

/// Encoder hidden frames, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSequence {
    frames: Matrix<f32>,
    frame_rate_hz: f64,
}

impl HiddenSequence {
    pub fn new(frames: Matrix<f32>, frame_rate_hz: f64) -> Self {
        Self {
            frames,
            frame_rate_hz,
        }
    }

    pub fn frames(&self) -> &Matrix<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix<f32> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    /// Non-overlapping mean of frame pairs; a trailing odd frame is dropped.
    pub fn pool_pairs(&self) -> HiddenSequence {
        let n = self.len() / 2;
        let mut out = Matrix::zeros(n, self.dim());
        for i in 0..n {
            mean_pair_into(
                self.frames.row(2 * i),
                self.frames.row(2 * i + 1),
                out.row_mut(i),
            );
        }
        HiddenSequence::new(out, self.frame_rate_hz / 2.0)
    }
}

pub(crate) fn mean_pair_into(a: &[f32], b: &[f32], out: &mut [f32]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = 0.5 * (x + y);
    }
}

/// Truncates or zero-pads every frame to `target_dim` columns.
pub fn fit_dim(x: &Matrix<f32>, target_dim: usize) -> Result<Matrix<f32>> {
    if target_dim == 0 {
        return Err(Error::Dimension("target dimension must be positive".into()));
    }
    let mut out = Matrix::zeros(x.rows(), target_dim);
    for i in 0..x.rows() {
        fit_row_into(x.row(i), out.row_mut(i));
    }
    Ok(out)
}

#[inline]
pub(crate) fn fit_row_into(src: &[f32], dst: &mut [f32]) {
    let n = src.len().min(dst.len());
    dst[..n].copy_from_slice(&src[..n]);
    dst[n..].iter_mut().for_each(|v| *v = 0.0);
}
