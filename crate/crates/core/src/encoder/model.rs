//! Encoder parameters and the offline (whole-utterance) forward pass.
//!
//! Every stack carries two paths. The main path is the masked computation
//! whose frames are emitted. The lookahead path is frame-causal: its state at
//! block `v` depends on input up to the last frame of `v` only. Main-path
//! queries read keys and values of blocks inside or before their own chunk
//! from the main path, and right-context blocks beyond the chunk from the
//! lookahead path. A main-path frame `t` therefore depends on input frames
//! below `chunk_end(t) + right_context` and nothing later, through every
//! stack and layer, which is what lets the streaming runtime reproduce it
//! exactly once that many frames have arrived.

use std::collections::VecDeque;
use std::ops::Range;

use super::{
    fit_row_into, mean_pair_into, EncoderConfig, FeatureSequence, HiddenSequence, BASE_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::mask::{block_mask, causal_block_mask, BlockLayout, MaskSpec};
use crate::matrix::{vec_mat, vec_mat_into, Matrix};
use crate::sched::SplitMix64;

/// Contiguous window of an unbounded sequence, addressed by absolute index.
#[derive(Debug, Clone)]
pub(crate) struct Ring<T> {
    start: usize,
    items: VecDeque<T>,
}

impl<T> Default for Ring<T> {
    fn default() -> Self {
        Self {
            start: 0,
            items: VecDeque::new(),
        }
    }
}

impl<T> Ring<T> {
    pub(crate) fn end(&self) -> usize {
        self.start + self.items.len()
    }

    pub(crate) fn len(&self) -> usize {
        self.items.len()
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> &T {
        &self.items[i - self.start]
    }

    #[inline]
    pub(crate) fn get_mut(&mut self, i: usize) -> &mut T {
        &mut self.items[i - self.start]
    }

    pub(crate) fn push(&mut self, item: T) {
        self.items.push_back(item);
    }

    /// Drops retained items below `keep_from`.
    pub(crate) fn trim_front(&mut self, keep_from: usize) {
        while self.start < keep_from && !self.items.is_empty() {
            self.items.pop_front();
            self.start += 1;
        }
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix<f32> {
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-0.1, 0.1) as f32)
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn uniform_vec(n: usize, rng: &mut SplitMix64) -> Vec<f32> {
    (0..n).map(|_| rng.uniform(-0.1, 0.1) as f32).collect()
}

#[derive(Debug, Clone)]
struct FeedForward {
    w1: Matrix<f32>,
    b1: Vec<f32>,
    w2: Matrix<f32>,
}

impl FeedForward {
    fn seeded(dim: usize, rng: &mut SplitMix64) -> Self {
        Self {
            w1: uniform_matrix(dim, 2 * dim, rng),
            b1: uniform_vec(2 * dim, rng),
            w2: uniform_matrix(2 * dim, dim, rng),
        }
    }

    /// Residual `x + W2 tanh(W1 x + b1)`.
    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut h = vec_mat(x, &self.w1);
        for (v, b) in h.iter_mut().zip(&self.b1) {
            *v = (*v + b).tanh();
        }
        let mut out = vec_mat(&h, &self.w2);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += xi;
        }
        out
    }
}

/// Per-block intermediate rows of one layer.
#[derive(Debug, Clone, Default)]
pub(crate) struct BlockRows {
    pub(crate) x0: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    gate: Vec<f32>,
    x1: Vec<f32>,
    vn: Vec<f32>,
    x2: Vec<f32>,
    v1: Vec<f32>,
    x3: Vec<f32>,
    x4: Vec<f32>,
    v2: Vec<f32>,
    pub(crate) out: Vec<f32>,
    // (block, read from the lookahead path)
    keys: Vec<(usize, bool)>,
    // head-major, one row of `keys.len()` weights per head
    weights: Vec<f32>,
}

impl BlockRows {
    pub(crate) fn with_input(x0: Vec<f32>) -> Self {
        Self {
            x0,
            ..Self::default()
        }
    }
}

/// One encoder block: shared multi-head weights feeding a nonlinear
/// attention module and two self-attention modules, with feed-forward maps
/// and a chunk-local causal convolution in between.
#[derive(Debug, Clone)]
pub(crate) struct LayerParams {
    heads: usize,
    head_dim: usize,
    wq: Matrix<f32>,
    wk: Matrix<f32>,
    ff1: FeedForward,
    gate: Matrix<f32>,
    nl_value: Matrix<f32>,
    nl_out: Matrix<f32>,
    sa1_value: Matrix<f32>,
    sa1_out: Matrix<f32>,
    conv: Matrix<f32>,
    sa2_value: Matrix<f32>,
    sa2_out: Matrix<f32>,
    ff2: FeedForward,
}

impl LayerParams {
    fn seeded(dim: usize, heads: usize, head_dim: usize, rng: &mut SplitMix64) -> Self {
        let inner = heads * head_dim;
        Self {
            heads,
            head_dim,
            wq: uniform_matrix(dim, inner, rng),
            wk: uniform_matrix(dim, inner, rng),
            ff1: FeedForward::seeded(dim, rng),
            gate: uniform_matrix(dim, inner, rng),
            nl_value: uniform_matrix(dim, inner, rng),
            nl_out: uniform_matrix(inner, dim, rng),
            sa1_value: uniform_matrix(dim, inner, rng),
            sa1_out: uniform_matrix(inner, dim, rng),
            conv: uniform_matrix(3, dim, rng),
            sa2_value: uniform_matrix(dim, inner, rng),
            sa2_out: uniform_matrix(inner, dim, rng),
            ff2: FeedForward::seeded(dim, rng),
        }
    }

    fn head(&self, row: &[f32], h: usize) -> std::ops::Range<usize> {
        debug_assert_eq!(row.len(), self.heads * self.head_dim);
        h * self.head_dim..(h + 1) * self.head_dim
    }

    fn weights(&self, q: &[f32], keys: &[&[f32]]) -> Vec<f32> {
        let n = keys.len();
        let scale = 1.0 / (self.head_dim as f32).sqrt();
        let mut w = vec![0.0f32; self.heads * n];
        for h in 0..self.heads {
            let cols = self.head(q, h);
            let row = &mut w[h * n..(h + 1) * n];
            let mut max = f32::NEG_INFINITY;
            for (score, k) in row.iter_mut().zip(keys) {
                *score = q[cols.clone()]
                    .iter()
                    .zip(&k[cols.clone()])
                    .map(|(a, b)| a * b)
                    .sum::<f32>()
                    * scale;
                max = max.max(*score);
            }
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            for s in row.iter_mut() {
                *s /= sum;
            }
        }
        w
    }

    fn mix(&self, w: &[f32], values: &[&[f32]]) -> Vec<f32> {
        let n = values.len();
        let mut out = vec![0.0f32; self.heads * self.head_dim];
        for h in 0..self.heads {
            let cols = self.head(&out, h);
            for (j, v) in values.iter().enumerate() {
                let a = w[h * n + j];
                for c in cols.clone() {
                    out[c] += a * v[c];
                }
            }
        }
        out
    }

    fn project_add(x: &[f32], mixed: &[f32], w: &Matrix<f32>) -> Vec<f32> {
        let mut out = vec_mat(mixed, w);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += xi;
        }
        out
    }
}

fn gather<'a>(
    keys: &[(usize, bool)],
    own: &'a Ring<BlockRows>,
    other: Option<&'a Ring<BlockRows>>,
    field: impl Fn(&'a BlockRows) -> &'a [f32],
) -> Vec<&'a [f32]> {
    keys.iter()
        .map(|&(v, from_other)| {
            let src = if from_other {
                other.expect("lookahead keys need the lookahead path")
            } else {
                own
            };
            field(src.get(v))
        })
        .collect()
}

/// Runs one layer over the blocks in `batch`, whose `x0` must already be set.
///
/// `keys_of(u)` lists the blocks visible to query `u` in ascending order and
/// whether each is read from `other`. Blocks referenced by `keys_of`, and the
/// two blocks before each batch member, must already hold this layer's rows
/// (or be in the batch).
pub(crate) fn run_layer(
    p: &LayerParams,
    batch: Range<usize>,
    own: &mut Ring<BlockRows>,
    other: Option<&Ring<BlockRows>>,
    mut keys_of: impl FnMut(usize) -> Vec<(usize, bool)>,
    layout: &BlockLayout,
) {
    for u in batch.clone() {
        let r = own.get_mut(u);
        r.q = vec_mat(&r.x0, &p.wq);
        r.k = vec_mat(&r.x0, &p.wk);
        r.gate = vec_mat(&r.x0, &p.gate).into_iter().map(f32::tanh).collect();
        r.x1 = p.ff1.apply(&r.x0);
        r.vn = vec_mat(&r.x1, &p.nl_value);
    }
    for u in batch.clone() {
        let keys = keys_of(u);
        let r = own.get(u);
        let w = p.weights(&r.q, &gather(&keys, own, other, |b| &b.k));
        let mut gated = p.mix(&w, &gather(&keys, own, other, |b| &b.vn));
        for (g, a) in gated.iter_mut().zip(&r.gate) {
            *g *= a;
        }
        let x2 = LayerParams::project_add(&r.x1, &gated, &p.nl_out);
        let v1 = vec_mat(&x2, &p.sa1_value);
        let r = own.get_mut(u);
        (r.keys, r.weights, r.x2, r.v1) = (keys, w, x2, v1);
    }
    for u in batch.clone() {
        let r = own.get(u);
        let mixed = p.mix(&r.weights, &gather(&r.keys, own, other, |b| &b.v1));
        let x3 = LayerParams::project_add(&r.x2, &mixed, &p.sa1_out);
        own.get_mut(u).x3 = x3;
    }
    for u in batch.clone() {
        let r = own.get(u);
        let mut x4 = r.x3.clone();
        for lag in 0..3 {
            let Some(v) = u.checked_sub(lag) else { break };
            if layout.chunk_of(v) != layout.chunk_of(u) {
                break;
            }
            for ((o, x), w) in x4.iter_mut().zip(&own.get(v).x3).zip(p.conv.row(lag)) {
                *o += w * x;
            }
        }
        let v2 = vec_mat(&x4, &p.sa2_value);
        let r = own.get_mut(u);
        (r.x4, r.v2) = (x4, v2);
    }
    for u in batch {
        let r = own.get(u);
        let mixed = p.mix(&r.weights, &gather(&r.keys, own, other, |b| &b.v2));
        let x5 = LayerParams::project_add(&r.x4, &mixed, &p.sa2_out);
        let out = p.ff2.apply(&x5);
        own.get_mut(u).out = out;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StackParams {
    pub(crate) factor: usize,
    pub(crate) dim: usize,
    pub(crate) layers: Vec<LayerParams>,
}

/// Mean of `rows(s)` over the base frames of `range`.
pub(crate) fn mean_rows<'a>(
    range: Range<usize>,
    dim: usize,
    rows: impl Fn(usize) -> &'a [f32],
) -> Vec<f32> {
    let mut out = vec![0.0f32; dim];
    let n = range.len() as f32;
    for s in range {
        for (o, v) in out.iter_mut().zip(rows(s)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Latest block that has fully ended by base frame `s`, judged on unclipped
/// block ends; this is what the lookahead path feeds back to frame `s`.
#[inline]
pub(crate) fn causal_source_block(layout: &BlockLayout, s: usize) -> Option<usize> {
    let b = layout.block_of(s);
    if layout.end(b) == s + 1 {
        Some(b)
    } else {
        b.checked_sub(1)
    }
}

/// Frame `xin` plus the change its block made, `out - pooled`; the block
/// may be absent.
pub(crate) fn residual(xin: &[f32], block: Option<(&[f32], &[f32])>) -> Vec<f32> {
    match block {
        Some((out, pooled)) => xin
            .iter()
            .zip(out)
            .zip(pooled)
            .map(|((x, o), p)| x + (o - p))
            .collect(),
        None => xin.to_vec(),
    }
}

/// Seeded toy encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    // weights applied to the first and second frame of each pair
    sub_w: [Matrix<f32>; 2],
    sub_b: Vec<f32>,
    pub(crate) stacks: Vec<StackParams>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(config.seed);
        let d0 = config.stack_dims[0];
        let sub_w = [
            uniform_matrix(config.feature_dim, d0, &mut rng),
            uniform_matrix(config.feature_dim, d0, &mut rng),
        ];
        let sub_b = uniform_vec(d0, &mut rng);
        let stacks = config
            .stacks()
            .iter()
            .map(|s| StackParams {
                factor: s.downsample_factor,
                dim: s.embed_dim,
                layers: (0..s.num_layers)
                    .map(|_| {
                        LayerParams::seeded(s.embed_dim, s.num_heads, s.attention_dim, &mut rng)
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            config,
            sub_w,
            sub_b,
            stacks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Width of the encoder output.
    pub fn output_dim(&self) -> usize {
        self.config.max_dim()
    }

    pub(crate) fn check_features(&self, features: &FeatureSequence) -> Result<()> {
        if (features.frame_rate_hz() - super::features::FEATURE_RATE_HZ).abs() > 1e-9 {
            return Err(Error::Dimension(format!(
                "features at {} Hz, encoder input runs at 100 Hz",
                features.frame_rate_hz()
            )));
        }
        if features.dim() != self.config.feature_dim {
            return Err(Error::Dimension(format!(
                "features have {} bins, encoder expects {}",
                features.dim(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    /// Maps one pair of 100 Hz frames to a 50 Hz frame.
    pub(crate) fn subsample_pair(&self, a: &[f32], b: &[f32]) -> Vec<f32> {
        let [wa, wb] = &self.sub_w;
        let mut out = vec_mat(a, wa);
        let mut tmp = vec![0.0f32; wb.cols()];
        vec_mat_into(b, wb, &mut tmp);
        for ((o, t), bias) in out.iter_mut().zip(&tmp).zip(&self.sub_b) {
            *o = (*o + t + bias).tanh();
        }
        out
    }

    /// Halves the 100 Hz feature rate to the 50 Hz base rate.
    pub fn subsample(&self, features: &FeatureSequence) -> Result<HiddenSequence> {
        self.check_features(features)?;
        if features.len() < 2 {
            return Err(Error::Dimension(format!(
                "subsampling needs at least 2 frames, got {}",
                features.len()
            )));
        }
        Ok(HiddenSequence::new(
            self.subsample_matrix(features.frames()),
            BASE_RATE_HZ,
        ))
    }

    fn subsample_matrix(&self, x: &Matrix<f32>) -> Matrix<f32> {
        let n = x.rows() / 2;
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|i| self.subsample_pair(x.row(2 * i), x.row(2 * i + 1)))
            .collect();
        Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, self.sub_b.len()))
    }

    /// Main-path encoder output at the 50 Hz base rate.
    pub fn forward_base(
        &self,
        features: &FeatureSequence,
        spec: &MaskSpec,
    ) -> Result<HiddenSequence> {
        self.check_features(features)?;
        spec.validate()?;
        let x = self.subsample_matrix(features.frames());
        Ok(HiddenSequence::new(
            self.forward_from_base(&x, spec)?,
            BASE_RATE_HZ,
        ))
    }

    /// Full encoder: subsampling, every stack, and the trailing pooling to 25 Hz.
    pub fn encoder_forward(
        &self,
        features: &FeatureSequence,
        spec: &MaskSpec,
    ) -> Result<HiddenSequence> {
        Ok(self.forward_base(features, spec)?.pool_pairs())
    }

    /// Runs all stacks over already-subsampled 50 Hz frames.
    pub(crate) fn forward_from_base(
        &self,
        x: &Matrix<f32>,
        spec: &MaskSpec,
    ) -> Result<Matrix<f32>> {
        let len = x.rows();
        let max_dim = self.output_dim();
        let mut out = Matrix::zeros(len, max_dim);
        let (mut main, mut ahead) = (x.clone(), x.clone());
        for stack in &self.stacks {
            let (m, a) = self.stack_offline(stack, spec, &main, &ahead)?;
            let mut tmp = vec![0.0f32; max_dim];
            for s in 0..len {
                fit_row_into(m.row(s), &mut tmp);
                for (o, v) in out.row_mut(s).iter_mut().zip(&tmp) {
                    *o += v;
                }
            }
            (main, ahead) = (m, a);
        }
        Ok(out)
    }

    fn stack_offline(
        &self,
        stack: &StackParams,
        spec: &MaskSpec,
        main_in: &Matrix<f32>,
        ahead_in: &Matrix<f32>,
    ) -> Result<(Matrix<f32>, Matrix<f32>)> {
        let len = main_in.rows();
        let xm = super::fit_dim(main_in, stack.dim)?;
        let xa = super::fit_dim(ahead_in, stack.dim)?;
        let layout = BlockLayout::new(spec, stack.factor)?;
        let n = layout.num_blocks(len);
        let main_mask = block_mask(spec, &layout, len);
        let ahead_mask = causal_block_mask(spec, &layout, len);

        let pool = |x: &Matrix<f32>| -> Vec<Vec<f32>> {
            (0..n)
                .map(|u| mean_rows(layout.range(u, len), stack.dim, |s| x.row(s)))
                .collect()
        };
        let (m_pooled, a_pooled) = (pool(&xm), pool(&xa));
        let (mut m_in, mut a_in) = (m_pooled.clone(), a_pooled.clone());
        for layer in &stack.layers {
            let mut a = Ring::default();
            a_in.into_iter()
                .for_each(|x| a.push(BlockRows::with_input(x)));
            run_layer(
                layer,
                0..n,
                &mut a,
                None,
                |u| ahead_mask.visible_keys(u).map(|v| (v, false)).collect(),
                &layout,
            );
            let mut m = Ring::default();
            m_in.into_iter()
                .for_each(|x| m.push(BlockRows::with_input(x)));
            run_layer(
                layer,
                0..n,
                &mut m,
                Some(&a),
                |u| {
                    main_mask
                        .visible_keys(u)
                        .map(|v| (v, layout.chunk_of(v) > layout.chunk_of(u)))
                        .collect()
                },
                &layout,
            );
            m_in = (0..n)
                .map(|u| std::mem::take(&mut m.get_mut(u).out))
                .collect();
            a_in = (0..n)
                .map(|u| std::mem::take(&mut a.get_mut(u).out))
                .collect();
        }

        let mut out_m = Matrix::zeros(len, stack.dim);
        let mut out_a = Matrix::zeros(len, stack.dim);
        for s in 0..len {
            let b = layout.block_of(s);
            let up = residual(xm.row(s), Some((&m_in[b], &m_pooled[b])));
            out_m.row_mut(s).copy_from_slice(&up);
            let src = causal_source_block(&layout, s)
                .map(|v| (a_in[v].as_slice(), a_pooled[v].as_slice()));
            out_a.row_mut(s).copy_from_slice(&residual(xa.row(s), src));
        }
        Ok((out_m, out_a))
    }
}

/// Mean of consecutive frame pairs; kept here so the streaming pairer and
/// [`HiddenSequence::pool_pairs`] agree bit for bit.
pub(crate) fn pool_pair(a: &[f32], b: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; a.len()];
    mean_pair_into(a, b, &mut out);
    out
}
