//! Incremental chunked inference.
//!
//! Features arrive at 100 Hz and are paired into 50 Hz encoder frames.
//! Encoder frame `t` is emitted by the push that brings the number of
//! received encoder frames to at least [`emission_deadline`]`(t)`, and its
//! value equals the offline [`Encoder::forward_base`] output for the same
//! utterance.
//!
//! Per stack and layer the state keeps the block rows of both encoder paths
//! for the blocks that can still be referenced: the left-context window of
//! the next unemitted chunk plus everything received after it. Lookahead
//! blocks are computed as soon as they are complete; main-path blocks once
//! their whole chunk is past its deadline. Nothing provisional is ever
//! computed, so nothing has to be revised.

use std::sync::Arc;

use crate::encoder::model::{
    causal_source_block, mean_rows, pool_pair, residual, run_layer, BlockRows, Ring,
};
use crate::encoder::{
    fit_row_into, Encoder, FeatureSequence, HiddenSequence, BASE_RATE_HZ, OUTPUT_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::mask::{BlockLayout, MaskSpec, FRAME_MS};
use crate::matrix::Matrix;

/// Number of received encoder frames needed before frame `t` is final.
#[inline]
pub fn emission_deadline(t: usize, spec: &MaskSpec) -> usize {
    spec.chunk_end(t) + spec.right_context()
}

/// Algorithmic delay of frame `t`: how long after its own arrival the frame
/// can be emitted.
pub fn added_latency_ms(t: usize, spec: &MaskSpec) -> u64 {
    (emission_deadline(t, spec) - t - 1) as u64 * FRAME_MS as u64
}

/// Encoder frames produced by one push or by finalize.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    /// Absolute index of the first emitted 50 Hz frame.
    pub first_frame: usize,
    pub hidden: HiddenSequence,
}

impl Emission {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.first_frame..self.first_frame + self.len()
    }
}

struct StackStream {
    layout: BlockLayout,
    dim: usize,
    main_in: Ring<Vec<f32>>,
    ahead_in: Ring<Vec<f32>>,
    main_blocks: Vec<Ring<BlockRows>>,
    ahead_blocks: Vec<Ring<BlockRows>>,
    main_out: Ring<Vec<f32>>,
    ahead_out: Ring<Vec<f32>>,
}

impl StackStream {
    fn retained(&self) -> usize {
        self.main_in.len()
            + self.ahead_in.len()
            + self.main_out.len()
            + self.ahead_out.len()
            + self.main_blocks.iter().map(Ring::len).sum::<usize>()
            + self.ahead_blocks.iter().map(Ring::len).sum::<usize>()
    }
}

/// One open stream. Calls must be serialized; separate streams are
/// independent and may share the encoder across threads.
pub struct StreamState {
    encoder: Arc<Encoder>,
    spec: MaskSpec,
    odd_frame: Option<Vec<f32>>,
    received: usize,
    next_emit: usize,
    finished: bool,
    base: Ring<Vec<f32>>,
    stacks: Vec<StackStream>,
}

/// Opens an empty stream.
pub fn open_stream(encoder: Arc<Encoder>, spec: MaskSpec) -> Result<StreamState> {
    StreamState::open(encoder, spec)
}

impl StreamState {
    pub fn open(encoder: Arc<Encoder>, spec: MaskSpec) -> Result<Self> {
        spec.validate()?;
        let stacks = encoder
            .stacks
            .iter()
            .map(|s| {
                Ok(StackStream {
                    layout: BlockLayout::new(&spec, s.factor)?,
                    dim: s.dim,
                    main_in: Ring::default(),
                    ahead_in: Ring::default(),
                    main_blocks: s.layers.iter().map(|_| Ring::default()).collect(),
                    ahead_blocks: s.layers.iter().map(|_| Ring::default()).collect(),
                    main_out: Ring::default(),
                    ahead_out: Ring::default(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            encoder,
            spec,
            odd_frame: None,
            received: 0,
            next_emit: 0,
            finished: false,
            base: Ring::default(),
            stacks,
        })
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    /// Encoder (50 Hz) frames received so far.
    pub fn frames_received(&self) -> usize {
        self.received
    }

    /// Index of the first encoder frame not yet emitted.
    pub fn next_emit(&self) -> usize {
        self.next_emit
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Frames received but still waiting for right context.
    pub fn pending_frames(&self) -> usize {
        self.received - self.next_emit
    }

    /// Rows currently held in caches and buffers, across all stacks.
    pub fn retained_rows(&self) -> usize {
        self.base.len() + self.stacks.iter().map(StackStream::retained).sum::<usize>()
    }

    /// Appends 100 Hz feature frames and returns every encoder frame that
    /// became final.
    pub fn push(&mut self, features: &FeatureSequence) -> Result<Emission> {
        if self.finished {
            return Err(Error::Stream("push after finalize"));
        }
        self.encoder.check_features(features)?;
        for row in features.frames().row_iter() {
            match self.odd_frame.take() {
                None => self.odd_frame = Some(row.to_vec()),
                Some(first) => {
                    self.base.push(self.encoder.subsample_pair(&first, row));
                    self.received += 1;
                }
            }
        }
        self.advance(false)
    }

    /// Flushes every pending frame with the stream end as a hard boundary and
    /// closes the stream. An unpaired trailing 100 Hz frame is dropped.
    pub fn finalize(&mut self) -> Result<Emission> {
        if self.finished {
            return Err(Error::Stream("stream already finalized"));
        }
        self.odd_frame = None;
        let out = self.advance(true);
        self.finished = true;
        out
    }

    /// End (exclusive) of the prefix of frames that are final.
    fn main_frontier(&self, fin: bool) -> usize {
        if fin {
            return self.received;
        }
        let chunk = self.spec.chunk_size();
        match self.received.checked_sub(self.spec.right_context()) {
            Some(r) => (r / chunk) * chunk,
            None => 0,
        }
    }

    fn advance(&mut self, fin: bool) -> Result<Emission> {
        let len = self.received;
        let frontier = self.main_frontier(fin).max(self.next_emit);
        let spec = self.spec;
        let encoder = Arc::clone(&self.encoder);

        for k in 0..self.stacks.len() {
            let (done, rest) = self.stacks.split_at_mut(k);
            let st = &mut rest[0];
            let (src_main, src_ahead) = match done.last() {
                Some(prev) => (&prev.main_out, &prev.ahead_out),
                None => (&self.base, &self.base),
            };
            let params = &encoder.stacks[k];
            let layout = st.layout;

            // lookahead path: every complete block, or all blocks at the end
            fill_fitted(&mut st.ahead_in, src_ahead, st.dim);
            let avail = st.ahead_in.end();
            let target = if fin {
                layout.num_blocks(len)
            } else {
                layout.complete_blocks(avail)
            };
            let first = st.ahead_blocks[0].end();
            if target > first {
                for u in first..target {
                    let x0 = mean_rows(layout.range(u, avail), st.dim, |s| st.ahead_in.get(s));
                    st.ahead_blocks[0].push(BlockRows::with_input(x0));
                }
                for (l, layer) in params.layers.iter().enumerate() {
                    if l > 0 {
                        let (lower, upper) = st.ahead_blocks.split_at_mut(l);
                        for u in first..target {
                            upper[0].push(BlockRows::with_input(lower[l - 1].get(u).out.clone()));
                        }
                    }
                    run_layer(
                        layer,
                        first..target,
                        &mut st.ahead_blocks[l],
                        None,
                        |u| {
                            let lo = layout.block_of(spec.window_start(layout.start(u)));
                            (lo..=u).map(|v| (v, false)).collect()
                        },
                        &layout,
                    );
                }
            }
            let (bottom, top) = (&st.ahead_blocks[0], st.ahead_blocks.last().unwrap());
            while st.ahead_out.end() < avail {
                let s = st.ahead_out.end();
                let up = causal_source_block(&layout, s)
                    .map(|v| (top.get(v).out.as_slice(), bottom.get(v).x0.as_slice()));
                st.ahead_out.push(residual(st.ahead_in.get(s), up));
            }

            // main path: whole chunks past their deadline
            fill_fitted(&mut st.main_in, src_main, st.dim);
            let avail = st.main_in.end().min(frontier);
            let target = layout.num_blocks(avail);
            let first = st.main_blocks[0].end();
            if target > first {
                for u in first..target {
                    let x0 = mean_rows(layout.range(u, avail), st.dim, |s| st.main_in.get(s));
                    st.main_blocks[0].push(BlockRows::with_input(x0));
                }
                for (l, layer) in params.layers.iter().enumerate() {
                    if l > 0 {
                        let (lower, upper) = st.main_blocks.split_at_mut(l);
                        for u in first..target {
                            upper[0].push(BlockRows::with_input(lower[l - 1].get(u).out.clone()));
                        }
                    }
                    let ahead = &st.ahead_blocks[l];
                    let known = ahead.end();
                    run_layer(
                        layer,
                        first..target,
                        &mut st.main_blocks[l],
                        Some(ahead),
                        |u| {
                            let q = layout.start(u);
                            let (lo, hi) = (spec.window_start(q), spec.window_end(q));
                            let chunk = layout.chunk_of(u);
                            (layout.block_of(lo)..known)
                                .take_while(|&v| layout.end(v) <= hi)
                                .map(|v| (v, layout.chunk_of(v) > chunk))
                                .collect()
                        },
                        &layout,
                    );
                }
            }
            let (bottom, top) = (&st.main_blocks[0], st.main_blocks.last().unwrap());
            while st.main_out.end() < avail {
                let s = st.main_out.end();
                let b = layout.block_of(s);
                let up = (top.get(b).out.as_slice(), bottom.get(b).x0.as_slice());
                st.main_out.push(residual(st.main_in.get(s), Some(up)));
            }
        }

        let max_dim = encoder.output_dim();
        let first_frame = self.next_emit;
        let mut out = Matrix::zeros(frontier - first_frame, max_dim);
        let mut tmp = vec![0.0f32; max_dim];
        for st in &self.stacks {
            for s in first_frame..frontier {
                fit_row_into(st.main_out.get(s), &mut tmp);
                for (o, v) in out.row_mut(s - first_frame).iter_mut().zip(&tmp) {
                    *o += v;
                }
            }
        }
        self.next_emit = frontier;
        self.trim();
        Ok(Emission {
            first_frame,
            hidden: HiddenSequence::new(out, BASE_RATE_HZ),
        })
    }

    fn trim(&mut self) {
        // with full left context every past frame stays reachable
        if self.spec.left_context().frames().is_none() {
            return;
        }
        let keep = self.spec.window_start(self.next_emit);
        self.base.trim_front(keep);
        for st in &mut self.stacks {
            let keep_block = st.layout.block_of(keep).saturating_sub(1);
            for ring in [
                &mut st.main_in,
                &mut st.ahead_in,
                &mut st.main_out,
                &mut st.ahead_out,
            ] {
                ring.trim_front(keep);
            }
            for ring in st.main_blocks.iter_mut().chain(st.ahead_blocks.iter_mut()) {
                ring.trim_front(keep_block);
            }
        }
    }
}

fn fill_fitted(dst: &mut Ring<Vec<f32>>, src: &Ring<Vec<f32>>, dim: usize) {
    while dst.end() < src.end() {
        let mut row = vec![0.0f32; dim];
        fit_row_into(src.get(dst.end()), &mut row);
        dst.push(row);
    }
}

/// Turns a run of 50 Hz emissions into 25 Hz output frames by averaging
/// consecutive pairs, holding an odd frame until its partner arrives.
#[derive(Debug, Default, Clone)]
pub struct PairPooler {
    held: Option<Vec<f32>>,
}

impl PairPooler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, emission: &Emission) -> HiddenSequence {
        let dim = emission.hidden.dim();
        let mut rows = Vec::new();
        for row in emission.hidden.frames().row_iter() {
            match self.held.take() {
                None => self.held = Some(row.to_vec()),
                Some(first) => rows.push(pool_pair(&first, row)),
            }
        }
        let frames = if rows.is_empty() {
            Matrix::zeros(0, dim)
        } else {
            Matrix::from_rows(&rows).unwrap()
        };
        HiddenSequence::new(frames, OUTPUT_RATE_HZ)
    }
}
