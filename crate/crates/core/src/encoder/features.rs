//! 80-bin log mel filterbank features at 100 Hz from 16 kHz mono audio.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW: usize = 400;
pub const HOP: usize = 160;
pub const NUM_BINS: usize = 80;
pub const FEATURE_RATE_HZ: f64 = 100.0;

const FFT_LEN: usize = 512;
const LOW_HZ: f64 = 20.0;
const ENERGY_FLOOR: f32 = 1e-10;

/// Number of frames produced for `samples` input samples.
pub fn num_frames(samples: usize) -> usize {
    if samples < WINDOW {
        0
    } else {
        (samples - WINDOW) / HOP + 1
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Reusable filterbank analyser.
pub struct Fbank {
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    // (first FFT bin, weights) per mel bin
    filters: Vec<(usize, Vec<f32>)>,
}

impl Default for Fbank {
    fn default() -> Self {
        Self::new()
    }
}

impl Fbank {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_LEN);
        let window = (0..WINDOW)
            .map(|i| {
                let hann =
                    0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (WINDOW - 1) as f64).cos();
                hann.powf(0.85) as f32
            })
            .collect();

        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let (mel_lo, mel_hi) = (hz_to_mel(LOW_HZ), hz_to_mel(nyquist));
        let step = (mel_hi - mel_lo) / (NUM_BINS + 1) as f64;
        let bin_hz = SAMPLE_RATE as f64 / FFT_LEN as f64;
        let filters = (0..NUM_BINS)
            .map(|m| {
                let left = mel_lo + m as f64 * step;
                let (centre, right) = (left + step, left + 2.0 * step);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..=FFT_LEN / 2 {
                    let mel = hz_to_mel(k as f64 * bin_hz);
                    let w = if mel > left && mel <= centre {
                        (mel - left) / (centre - left)
                    } else if mel > centre && mel < right {
                        (right - mel) / (right - centre)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w as f32);
                    } else if first.is_some() {
                        break;
                    }
                }
                // very narrow low filters can miss every FFT bin; fall back to the nearest one
                let first = first.unwrap_or_else(|| {
                    weights.push(1.0);
                    (mel_to_hz(centre) / bin_hz).round() as usize
                });
                (first, weights)
            })
            .collect();
        Self {
            fft,
            window,
            filters,
        }
    }

    /// Features of one `WINDOW`-sample frame.
    pub fn frame(&self, samples: &[f32], out: &mut [f32]) {
        debug_assert_eq!(samples.len(), WINDOW);
        debug_assert_eq!(out.len(), NUM_BINS);
        let mean = samples.iter().sum::<f32>() / WINDOW as f32;
        let mut buf = vec![Complex::new(0.0f32, 0.0); FFT_LEN];
        for (i, (&x, &w)) in samples.iter().zip(&self.window).enumerate() {
            buf[i].re = (x - mean) * w;
        }
        self.fft.process(&mut buf);
        let power: Vec<f32> = buf[..=FFT_LEN / 2].iter().map(|c| c.norm_sqr()).collect();
        for (o, (first, weights)) in out.iter_mut().zip(&self.filters) {
            let e: f32 = weights
                .iter()
                .zip(&power[*first..])
                .map(|(w, p)| w * p)
                .sum();
            *o = e.max(ENERGY_FLOOR).ln();
        }
    }
}

fn check_rate(sample_rate: u32) -> Result<()> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::Audio(format!(
            "sample rate {sample_rate} Hz is not supported, expected {SAMPLE_RATE} Hz"
        )));
    }
    Ok(())
}

/// Offline feature extraction over a whole utterance.
pub fn extract_features(pcm: &[f32], sample_rate: u32) -> Result<FeatureSequence> {
    check_rate(sample_rate)?;
    if pcm.is_empty() {
        return Err(Error::Audio("empty audio".into()));
    }
    let n = num_frames(pcm.len());
    if n == 0 {
        return Err(Error::Audio(format!(
            "{} samples is shorter than one {WINDOW}-sample window",
            pcm.len()
        )));
    }
    let fbank = Fbank::new();
    let mut frames = Matrix::zeros(n, NUM_BINS);
    for i in 0..n {
        fbank.frame(&pcm[i * HOP..i * HOP + WINDOW], frames.row_mut(i));
    }
    FeatureSequence::new(frames, FEATURE_RATE_HZ)
}

/// Signed 16-bit little-endian PCM to floats in `[-1, 1)`.
pub fn pcm_s16le_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect()
}

/// Incremental extractor producing exactly the frames [`extract_features`]
/// would produce for the concatenated input.
pub struct FeatureStream {
    fbank: Fbank,
    buffer: Vec<f32>,
    // absolute sample index of buffer[0]
    offset: usize,
    emitted: usize,
}

impl Default for FeatureStream {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureStream {
    pub fn new() -> Self {
        Self {
            fbank: Fbank::new(),
            buffer: Vec::new(),
            offset: 0,
            emitted: 0,
        }
    }

    pub fn samples_seen(&self) -> usize {
        self.offset + self.buffer.len()
    }

    pub fn push(&mut self, samples: &[f32]) -> Matrix<f32> {
        self.buffer.extend_from_slice(samples);
        let total = num_frames(self.samples_seen());
        let fresh = total - self.emitted;
        let mut frames = Matrix::zeros(fresh, NUM_BINS);
        for (row, i) in (self.emitted..total).enumerate() {
            let start = i * HOP - self.offset;
            self.fbank
                .frame(&self.buffer[start..start + WINDOW], frames.row_mut(row));
        }
        self.emitted = total;
        let keep_from = self.emitted * HOP;
        if keep_from > self.offset {
            let drop = (keep_from - self.offset).min(self.buffer.len());
            self.buffer.drain(..drop);
            self.offset += drop;
        }
        frames
    }
}
