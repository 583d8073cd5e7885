#![allow(dead_code)]

use std::sync::Arc;

use zipstream::encoder::FeatureSequence;
use zipstream::sched::SplitMix64;
use zipstream::stream::{open_stream, Emission};
use zipstream::{Encoder, EncoderConfig, MaskSpec, Matrix};

pub fn encoder() -> Arc<Encoder> {
    Arc::new(Encoder::new(EncoderConfig::default()).unwrap())
}

/// Random 100 Hz features worth `n` encoder frames.
pub fn features(n: usize, rng: &mut SplitMix64) -> FeatureSequence {
    let data = (0..2 * n * 80)
        .map(|_| rng.uniform(-3.0, 3.0) as f32)
        .collect();
    FeatureSequence::at_input_rate(Matrix::from_vec(2 * n, 80, data).unwrap()).unwrap()
}

pub fn slice(f: &FeatureSequence, start: usize, len: usize) -> FeatureSequence {
    let rows: Vec<&[f32]> = f.frames().row_iter().skip(start).take(len).collect();
    let m = if rows.is_empty() {
        Matrix::zeros(0, f.dim())
    } else {
        Matrix::from_rows(&rows).unwrap()
    };
    FeatureSequence::at_input_rate(m).unwrap()
}

/// How the 100 Hz input is split across pushes.
#[derive(Debug, Clone, Copy)]
pub enum Partition {
    /// One encoder frame per push.
    FrameByFrame,
    /// 500 ms per push.
    HalfSecond,
    Whole,
    Random(u64),
}

impl Partition {
    pub fn sizes(self, total: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut left = total;
        let mut rng = match self {
            Partition::Random(seed) => Some(SplitMix64::new(seed)),
            _ => None,
        };
        while left > 0 {
            let n = match self {
                Partition::FrameByFrame => 2,
                Partition::HalfSecond => 50,
                Partition::Whole => total,
                Partition::Random(_) => 1 + (rng.as_mut().unwrap().next_u64() % 40) as usize,
            }
            .min(left);
            out.push(n);
            left -= n;
        }
        out
    }
}

/// Every push's emission, plus the finalize emission last, each tagged with
/// the number of encoder frames received when it was produced.
pub struct Streamed {
    pub emissions: Vec<(usize, Emission)>,
    pub final_emission: Emission,
}

impl Streamed {
    pub fn concat(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for (_, e) in &self.emissions {
            out.extend_from_slice(e.hidden.frames().as_slice());
        }
        out.extend_from_slice(self.final_emission.hidden.frames().as_slice());
        out
    }
}

pub fn stream(enc: &Arc<Encoder>, spec: MaskSpec, f: &FeatureSequence, p: Partition) -> Streamed {
    let mut st = open_stream(Arc::clone(enc), spec).unwrap();
    let mut at = 0;
    let mut emissions = Vec::new();
    for n in p.sizes(f.len()) {
        let e = st.push(&slice(f, at, n)).unwrap();
        at += n;
        emissions.push((st.frames_received(), e));
    }
    let final_emission = st.finalize().unwrap();
    Streamed { emissions, final_emission }
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}
