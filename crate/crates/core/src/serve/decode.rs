//! Greedy stub decoder: a fixed seeded projection to a small vocabulary,
//! argmax per 25 Hz frame, adjacent duplicates collapsed.

use serde::{Deserialize, Serialize};

use crate::encoder::model::pool_pair;
use crate::encoder::HiddenSequence;
use crate::matrix::{vec_mat_into, Matrix};
use crate::sched::SplitMix64;

pub const VOCAB_SIZE: usize = 32;

const DECODER_SEED_SALT: u64 = 0x5eed_dec0;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StubTranscript {
    pub tokens: Vec<u32>,
    /// Start of each token in 20 ms units.
    pub frame_offsets: Vec<usize>,
}

impl StubTranscript {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct StubDecoder {
    proj: Matrix<f32>,
}

impl StubDecoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed ^ DECODER_SEED_SALT);
        let data = (0..dim * VOCAB_SIZE)
            .map(|_| rng.uniform(-1.0, 1.0) as f32)
            .collect();
        Self {
            proj: Matrix::from_vec(dim, VOCAB_SIZE, data).unwrap(),
        }
    }

    pub fn dim(&self) -> usize {
        self.proj.rows()
    }

    /// Class of one output frame; ties go to the lowest index.
    pub fn classify(&self, frame: &[f32]) -> u32 {
        let mut logits = [0.0f32; VOCAB_SIZE];
        vec_mat_into(frame, &self.proj, &mut logits);
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best as u32
    }

    /// One class per 25 Hz frame, before collapsing.
    pub fn frame_tokens(&self, hidden: &HiddenSequence) -> Vec<u32> {
        hidden
            .frames()
            .row_iter()
            .map(|r| self.classify(r))
            .collect()
    }

    pub fn decode(&self, hidden: &HiddenSequence) -> StubTranscript {
        let mut inc = IncrementalDecoder::new(self.clone());
        inc.push_output(hidden);
        inc.transcript().clone()
    }
}

/// Decodes 25 Hz output frames as they are produced. Collapsing carries the
/// last token across calls, so the concatenated increments equal the
/// transcript of the whole sequence.
#[derive(Debug, Clone)]
pub struct IncrementalDecoder {
    decoder: StubDecoder,
    held: Option<Vec<f32>>,
    frames: usize,
    last: Option<u32>,
    transcript: StubTranscript,
}

impl IncrementalDecoder {
    pub fn new(decoder: StubDecoder) -> Self {
        Self {
            decoder,
            held: None,
            frames: 0,
            last: None,
            transcript: StubTranscript::default(),
        }
    }

    /// Feeds 50 Hz encoder frames, pooling them in pairs. Returns the tokens
    /// that are new after collapsing.
    pub fn push_base(&mut self, base: &HiddenSequence) -> Vec<u32> {
        let mut fresh = Vec::new();
        for row in base.frames().row_iter() {
            match self.held.take() {
                None => self.held = Some(row.to_vec()),
                Some(first) => self.push_frame(&pool_pair(&first, row), &mut fresh),
            }
        }
        fresh
    }

    /// Feeds 25 Hz output frames directly.
    pub fn push_output(&mut self, out: &HiddenSequence) -> Vec<u32> {
        let mut fresh = Vec::new();
        for row in out.frames().row_iter() {
            self.push_frame(row, &mut fresh);
        }
        fresh
    }

    fn push_frame(&mut self, frame: &[f32], fresh: &mut Vec<u32>) {
        let tok = self.decoder.classify(frame);
        if self.last != Some(tok) {
            self.transcript.tokens.push(tok);
            self.transcript.frame_offsets.push(2 * self.frames);
            fresh.push(tok);
        }
        self.last = Some(tok);
        self.frames += 1;
    }

    /// Output frames decoded so far.
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn transcript(&self) -> &StubTranscript {
        &self.transcript
    }
}

/// Convenience for [`StubDecoder::decode`] with the decoder derived from
/// `dim` and `seed`.
pub fn decode_stub(hidden: &HiddenSequence, seed: u64) -> StubTranscript {
    StubDecoder::new(hidden.dim(), seed).decode(hidden)
}
