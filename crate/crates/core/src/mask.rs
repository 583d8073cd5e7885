//! Chunked attention masks with left context and beyond-chunk right context.
//!
//! All positions are encoder base-rate frames (50 Hz, 20 ms each). A query
//! frame `t` belongs to the chunk `[chunk_start(t), chunk_end(t))`; it may
//! attend to keys from `chunk_start(t) - left_context` up to, but excluding,
//! `chunk_end(t) + right_context`. Every frame of a chunk shares one window.
//!
//! Downsampled stacks see the sequence as blocks of `factor` base frames.
//! A downsampled query is represented by the first base frame of its block
//! and a downsampled key by its last, so a stack never looks further ahead
//! than the base-rate mask allows.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Duration of one encoder base-rate frame.
pub const FRAME_MS: u32 = 20;

/// How many frames before a chunk start stay visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LeftContext {
    Frames(usize),
    Full,
}

impl LeftContext {
    pub fn frames(self) -> Option<usize> {
        match self {
            LeftContext::Frames(n) => Some(n),
            LeftContext::Full => None,
        }
    }
}

impl fmt::Display for LeftContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeftContext::Frames(n) => write!(f, "{n}"),
            LeftContext::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for LeftContext {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(LeftContext::Full);
        }
        s.parse::<usize>().map(LeftContext::Frames).map_err(|_| {
            Error::InvalidSpec(format!(
                "left context {s:?} is neither a frame count nor \"full\""
            ))
        })
    }
}

impl Serialize for LeftContext {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LeftContext::Frames(n) => ser.serialize_u64(*n as u64),
            LeftContext::Full => ser.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for LeftContext {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(n) => Ok(LeftContext::Frames(n as usize)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Chunk size plus left and right context, all in base-rate frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskSpec {
    chunk_size: usize,
    left_context: LeftContext,
    right_context: usize,
}

impl MaskSpec {
    pub fn new(chunk_size: usize, left_context: LeftContext, right_context: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::InvalidSpec("chunk size must be at least 1".into()));
        }
        Ok(Self {
            chunk_size,
            left_context,
            right_context,
        })
    }

    /// A spec under which every frame sees the whole utterance of `len` frames.
    pub fn full_context(len: usize) -> Self {
        Self {
            chunk_size: len.max(1),
            left_context: LeftContext::Full,
            right_context: 0,
        }
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn left_context(&self) -> LeftContext {
        self.left_context
    }

    pub fn right_context(&self) -> usize {
        self.right_context
    }

    /// Re-checks the invariants; specs built through serde bypass `new`.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.chunk_size, self.left_context, self.right_context).map(|_| ())
    }

    #[inline]
    pub fn chunk_index(&self, t: usize) -> usize {
        t / self.chunk_size
    }

    #[inline]
    pub fn chunk_start(&self, t: usize) -> usize {
        self.chunk_index(t) * self.chunk_size
    }

    #[inline]
    pub fn chunk_end(&self, t: usize) -> usize {
        self.chunk_start(t) + self.chunk_size
    }

    /// First key visible to query `t`.
    #[inline]
    pub fn window_start(&self, t: usize) -> usize {
        match self.left_context {
            LeftContext::Frames(n) => self.chunk_start(t).saturating_sub(n),
            LeftContext::Full => 0,
        }
    }

    /// One past the last key visible to query `t`.
    #[inline]
    pub fn window_end(&self, t: usize) -> usize {
        self.chunk_end(t) + self.right_context
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "chunk={} left={} rc={}",
            self.chunk_size, self.left_context, self.right_context
        )
    }
}

/// Whether base-rate query `t` may attend to base-rate key `s`.
#[inline]
pub fn visible(t: usize, s: usize, spec: &MaskSpec) -> bool {
    spec.window_start(t) <= s && s < spec.window_end(t)
}

/// Dense boolean visibility matrix, queries by keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(rows * cols);
        for u in 0..rows {
            for v in 0..cols {
                cells.push(f(u, v));
            }
        }
        Self { rows, cols, cells }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.cells[u * self.cols + v]
    }

    pub fn row(&self, u: usize) -> &[bool] {
        &self.cells[u * self.cols..(u + 1) * self.cols]
    }

    /// Visible key indices of row `u`, ascending.
    pub fn visible_keys(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(u)
            .iter()
            .enumerate()
            .filter_map(|(v, &on)| on.then_some(v))
    }

    pub fn count_visible(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Elementwise `self <= other`.
    pub fn is_subset_of(&self, other: &AttentionMask) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }
}

impl fmt::Display for AttentionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for u in 0..self.rows {
            for &c in self.row(u) {
                f.write_str(if c { "1" } else { "0" })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn build_mask(len_q: usize, len_k: usize, spec: &MaskSpec) -> AttentionMask {
    AttentionMask::from_fn(len_q, len_k, |t, s| visible(t, s, spec))
}

/// Mask at a uniformly downsampled rate: query block `u` covers base frames
/// `[u*factor, (u+1)*factor)`, and likewise for keys.
pub fn downsample_mask(
    spec: &MaskSpec,
    factor: usize,
    len_q: usize,
    len_k: usize,
) -> Result<AttentionMask> {
    if factor == 0 {
        return Err(Error::InvalidSpec(
            "downsample factor must be at least 1".into(),
        ));
    }
    Ok(AttentionMask::from_fn(len_q, len_k, |u, v| {
        visible(u * factor, (v + 1) * factor - 1, spec)
    }))
}

/// Chunk-aligned pooling blocks of `factor` base frames over a sequence of
/// `len` base frames.
///
/// Blocks never straddle a chunk boundary: each chunk is cut into runs of
/// `factor` frames and its last run may be shorter. When the chunk size is a
/// multiple of `factor` this is plain uniform pooling. Blocks are numbered
/// globally, so block `u`'s bounds do not depend on `len` except for clipping
/// at the sequence end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    chunk: usize,
    factor: usize,
    per_chunk: usize,
}

impl BlockLayout {
    pub fn new(spec: &MaskSpec, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidSpec(
                "downsample factor must be at least 1".into(),
            ));
        }
        let chunk = spec.chunk_size();
        Ok(Self {
            chunk,
            factor,
            per_chunk: chunk.div_ceil(factor),
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Block containing base frame `s`.
    #[inline]
    pub fn block_of(&self, s: usize) -> usize {
        let c = s / self.chunk;
        c * self.per_chunk + (s - c * self.chunk) / self.factor
    }

    /// First base frame of block `u`.
    #[inline]
    pub fn start(&self, u: usize) -> usize {
        let c = u / self.per_chunk;
        c * self.chunk + (u % self.per_chunk) * self.factor
    }

    /// One past the last base frame of block `u`, ignoring the sequence end.
    #[inline]
    pub fn end(&self, u: usize) -> usize {
        let c = u / self.per_chunk;
        (self.start(u) + self.factor).min((c + 1) * self.chunk)
    }

    /// Base frame range of block `u` clipped to a sequence of `len` frames.
    #[inline]
    pub fn range(&self, u: usize, len: usize) -> std::ops::Range<usize> {
        self.start(u)..self.end(u).min(len)
    }

    /// Number of blocks covering `len` base frames.
    pub fn num_blocks(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            self.block_of(len - 1) + 1
        }
    }

    /// Number of blocks entirely contained in the first `len` frames.
    pub fn complete_blocks(&self, len: usize) -> usize {
        let n = self.num_blocks(len);
        if n > 0 && self.end(n - 1) > len {
            n - 1
        } else {
            n
        }
    }

    /// Chunk index of block `u`.
    #[inline]
    pub fn chunk_of(&self, u: usize) -> usize {
        u / self.per_chunk
    }
}

/// Main-path visibility at the block rate: `u` sees `v` under the
/// conservative rule. Block ends are taken unclipped, so a block cut short by
/// the sequence end is judged by where it would have ended.
#[inline]
pub fn block_visible(layout: &BlockLayout, spec: &MaskSpec, u: usize, v: usize) -> bool {
    visible(layout.start(u), layout.end(v) - 1, spec)
}

/// Frame-causal visibility at the block rate: `u` sees earlier-or-equal blocks
/// that still reach into its left-context window.
#[inline]
pub fn causal_block_visible(layout: &BlockLayout, spec: &MaskSpec, u: usize, v: usize) -> bool {
    v <= u && layout.end(v) > spec.window_start(layout.start(u))
}

/// Main-path mask over the blocks of a `len`-frame sequence.
pub fn block_mask(spec: &MaskSpec, layout: &BlockLayout, len: usize) -> AttentionMask {
    let n = layout.num_blocks(len);
    AttentionMask::from_fn(n, n, |u, v| block_visible(layout, spec, u, v))
}

/// Frame-causal mask over the blocks of a `len`-frame sequence.
pub fn causal_block_mask(spec: &MaskSpec, layout: &BlockLayout, len: usize) -> AttentionMask {
    let n = layout.num_blocks(len);
    AttentionMask::from_fn(n, n, |u, v| causal_block_visible(layout, spec, u, v))
}
