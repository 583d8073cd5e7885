//! Masked multi-head self-attention with an analytic backward pass.
//!
//! Masked cells are left out of the softmax normalisation entirely (the
//! same as adding negative infinity to their scores), so they get weight
//! zero and receive zero gradient.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::mask::AttentionMask;
use crate::matrix::Matrix;
use crate::sched::SplitMix64;

/// Softmax of `scores` restricted to the cells where `visible` is set;
/// hidden cells come out as exactly zero.
pub fn softmax_visible<F: Float>(scores: &[F], visible: &[bool], out: &mut [F]) {
    let max = scores
        .iter()
        .zip(visible)
        .filter(|(_, &v)| v)
        .fold(F::neg_infinity(), |m, (&s, _)| m.max(s));
    let mut sum = F::zero();
    for ((o, &s), &v) in out.iter_mut().zip(scores).zip(visible) {
        *o = if v { (s - max).exp() } else { F::zero() };
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Dense per-role projections of one multi-head attention module.
///
/// `wq`, `wk`, `wv` map `embed_dim` to `num_heads * head_dim`; `wo` maps the
/// concatenated heads back to `embed_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<F> {
    pub num_heads: usize,
    pub head_dim: usize,
    pub wq: Matrix<F>,
    pub wk: Matrix<F>,
    pub wv: Matrix<F>,
    pub wo: Matrix<F>,
}

impl<F: Float> AttentionParams<F> {
    /// Uniform(-0.1, 0.1) initialisation.
    pub fn seeded(
        embed_dim: usize,
        num_heads: usize,
        head_dim: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let inner = num_heads * head_dim;
        let mut init = |r, c| {
            let data = (0..r * c)
                .map(|_| F::from(rng.uniform(-0.1, 0.1)).unwrap())
                .collect();
            Matrix::from_vec(r, c, data).unwrap()
        };
        Self {
            num_heads,
            head_dim,
            wq: init(embed_dim, inner),
            wk: init(embed_dim, inner),
            wv: init(embed_dim, inner),
            wo: init(inner, embed_dim),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, inner) = (self.embed_dim(), self.num_heads * self.head_dim);
        if self.num_heads == 0 || self.head_dim == 0 {
            return Err(Error::Dimension(
                "heads and head dim must be positive".into(),
            ));
        }
        for (name, m, r, c) in [
            ("wq", &self.wq, d, inner),
            ("wk", &self.wk, d, inner),
            ("wv", &self.wv, d, inner),
            ("wo", &self.wo, inner, d),
        ] {
            if m.rows() != r || m.cols() != c {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    /// Same-shaped parameters filled with zeros, used for gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            num_heads: self.num_heads,
            head_dim: self.head_dim,
            wq: Matrix::zeros(self.wq.rows(), self.wq.cols()),
            wk: Matrix::zeros(self.wk.rows(), self.wk.cols()),
            wv: Matrix::zeros(self.wv.rows(), self.wv.cols()),
            wo: Matrix::zeros(self.wo.rows(), self.wo.cols()),
        }
    }

    pub fn matrices(&self) -> [&Matrix<F>; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix<F>; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }
}

/// Single-head `softmax(mask(QK^T) / sqrt(d)) V`.
///
/// Returns the output rows and the weight matrix.
pub fn scaled_masked_attention<F: Float>(
    q: &Matrix<F>,
    k: &Matrix<F>,
    v: &Matrix<F>,
    mask: &AttentionMask,
) -> Result<(Matrix<F>, Matrix<F>)> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::Dimension(format!(
            "Q {}x{}, K {}x{}, V {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        )));
    }
    check_mask(mask, q.rows(), k.rows())?;
    let scale = F::one() / F::from(q.cols()).unwrap().sqrt();
    let (lq, lk) = (q.rows(), k.rows());
    let mut weights = Matrix::zeros(lq, lk);
    let mut scores = vec![F::zero(); lk];
    for t in 0..lq {
        for (s, score) in scores.iter_mut().enumerate() {
            *score = dot(q.row(t), k.row(s)) * scale;
        }
        softmax_visible(&scores, mask.row(t), weights.row_mut(t));
    }
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

fn check_mask(mask: &AttentionMask, lq: usize, lk: usize) -> Result<()> {
    if mask.rows() != lq || mask.cols() != lk {
        return Err(Error::Dimension(format!(
            "mask is {}x{} for {lq} queries and {lk} keys",
            mask.rows(),
            mask.cols()
        )));
    }
    if let Some(t) = (0..lq).find(|&t| !mask.row(t).iter().any(|&c| c)) {
        return Err(Error::Dimension(format!("mask row {t} has no visible key")));
    }
    Ok(())
}

#[inline]
fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

fn head_cols<F: Float>(m: &Matrix<F>, head: usize, head_dim: usize) -> Matrix<F> {
    let mut out = Matrix::zeros(m.rows(), head_dim);
    for i in 0..m.rows() {
        out.row_mut(i)
            .copy_from_slice(&m.row(i)[head * head_dim..(head + 1) * head_dim]);
    }
    out
}

/// Intermediate values kept by the forward pass for [`attention_backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    input: Matrix<F>,
    q: Matrix<F>,
    k: Matrix<F>,
    v: Matrix<F>,
    heads: Matrix<F>,
    mask: AttentionMask,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput<F> {
    pub output: Matrix<F>,
    /// One `L x L` weight matrix per head; masked cells are zero.
    pub weights: Vec<Matrix<F>>,
    cache: Option<AttentionCache<F>>,
}

impl<F> AttentionOutput<F> {
    /// Drops the backward cache, keeping output and weights.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Multi-head masked self-attention over `y` (one row per frame).
pub fn masked_attention<F: Float>(
    y: &Matrix<F>,
    params: &AttentionParams<F>,
    mask: &AttentionMask,
) -> Result<AttentionOutput<F>> {
    params.validate()?;
    if y.cols() != params.embed_dim() {
        return Err(Error::Dimension(format!(
            "input width {} but attention expects {}",
            y.cols(),
            params.embed_dim()
        )));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("attention input"));
    }
    check_mask(mask, y.rows(), y.rows())?;

    let q = y.matmul(&params.wq)?;
    let k = y.matmul(&params.wk)?;
    let v = y.matmul(&params.wv)?;
    let (h, dh) = (params.num_heads, params.head_dim);
    let mut heads = Matrix::zeros(y.rows(), h * dh);
    let mut weights = Vec::with_capacity(h);
    for head in 0..h {
        let (o, w) = scaled_masked_attention(
            &head_cols(&q, head, dh),
            &head_cols(&k, head, dh),
            &head_cols(&v, head, dh),
            mask,
        )?;
        for t in 0..y.rows() {
            heads.row_mut(t)[head * dh..(head + 1) * dh].copy_from_slice(o.row(t));
        }
        weights.push(w);
    }
    let output = heads.matmul(&params.wo)?;
    Ok(AttentionOutput {
        output,
        weights,
        cache: Some(AttentionCache {
            input: y.clone(),
            q,
            k,
            v,
            heads,
            mask: mask.clone(),
        }),
    })
}

#[derive(Debug, Clone)]
pub struct AttentionGradients<F> {
    pub input: Matrix<F>,
    pub params: AttentionParams<F>,
    /// Gradient with respect to the pre-softmax scores, one matrix per head.
    pub scores: Vec<Matrix<F>>,
}

/// Gradients of `sum(upstream * output)` with respect to the input and all
/// four projections.
pub fn attention_backward<F: Float>(
    upstream: &Matrix<F>,
    forward: &AttentionOutput<F>,
    params: &AttentionParams<F>,
) -> Result<AttentionGradients<F>> {
    let cache = forward
        .cache
        .as_ref()
        .ok_or_else(|| Error::Dimension("attention backward needs the forward cache".into()))?;
    let (l, d) = (cache.input.rows(), cache.input.cols());
    if upstream.rows() != l || upstream.cols() != d {
        return Err(Error::Dimension(format!(
            "upstream gradient is {}x{}, output is {l}x{d}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    let (h, dh) = (params.num_heads, params.head_dim);
    let scale = F::one() / F::from(dh).unwrap().sqrt();

    let mut grads = params.zeros_like();
    grads.wo = cache.heads.transpose().matmul(upstream)?;
    let d_heads = upstream.matmul(&params.wo.transpose())?;

    let mut d_q = Matrix::zeros(l, h * dh);
    let mut d_k = Matrix::zeros(l, h * dh);
    let mut d_v = Matrix::zeros(l, h * dh);
    let mut d_scores = Vec::with_capacity(h);
    for (head, w) in forward.weights.iter().enumerate() {
        let cols = head * dh..(head + 1) * dh;
        let mut ds = Matrix::zeros(l, l);
        for t in 0..l {
            let g_out = &d_heads.row(t)[cols.clone()];
            // dA[t,s] = g_out . V[s]
            let d_a: Vec<F> = (0..l)
                .map(|s| dot(g_out, &cache.v.row(s)[cols.clone()]))
                .collect();
            let inner = (0..l).fold(F::zero(), |acc, s| acc + w[(t, s)] * d_a[s]);
            for s in 0..l {
                if cache.mask.get(t, s) {
                    ds[(t, s)] = w[(t, s)] * (d_a[s] - inner);
                }
            }
            for s in 0..l {
                let a = w[(t, s)];
                if a != F::zero() {
                    for (j, c) in cols.clone().enumerate() {
                        d_v[(s, c)] = d_v[(s, c)] + a * g_out[j];
                    }
                }
            }
        }
        for t in 0..l {
            for s in 0..l {
                let g = ds[(t, s)] * scale;
                if g == F::zero() {
                    continue;
                }
                for c in cols.clone() {
                    d_q[(t, c)] = d_q[(t, c)] + g * cache.k[(s, c)];
                    d_k[(s, c)] = d_k[(s, c)] + g * cache.q[(t, c)];
                }
            }
        }
        d_scores.push(ds);
    }

    let xt = cache.input.transpose();
    grads.wq = xt.matmul(&d_q)?;
    grads.wk = xt.matmul(&d_k)?;
    grads.wv = xt.matmul(&d_v)?;

    let mut d_input = d_q.matmul(&params.wq.transpose())?;
    for (dm, w) in [(&d_k, &params.wk), (&d_v, &params.wv)] {
        let part = dm.matmul(&w.transpose())?;
        for (a, b) in d_input.as_mut_slice().iter_mut().zip(part.as_slice()) {
            *a = *a + *b;
        }
    }
    Ok(AttentionGradients {
        input: d_input,
        params: grads,
        scores: d_scores,
    })
}
