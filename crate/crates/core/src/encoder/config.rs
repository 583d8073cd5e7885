//! Encoder configuration and its `key = value` text form.
//!
//! ```text
//! # toy multi-rate encoder
//! feature_dim = 80
//! stack_dims = 8,12,16,24,16,12
//! downsample_factors = 1,2,4,8,4,2
//! num_layers = 1
//! num_heads = 2
//! attention_dim = 8
//! seed = 42
//! ```
//!
//! An engine config may additionally carry a default mask under `chunk`,
//! `left` (frames or `full`) and `rc`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{LeftContext, MaskSpec};

const ALLOWED_FACTORS: [usize; 4] = [1, 2, 4, 8];

/// One stack of the multi-rate encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    /// Relative to the 50 Hz base rate.
    pub downsample_factor: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    /// Per-head attention dimension `d`.
    pub attention_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub stack_dims: Vec<usize>,
    pub downsample_factors: Vec<usize>,
    pub num_layers: usize,
    pub num_heads: usize,
    pub attention_dim: usize,
    pub seed: u64,
    pub default_mask: Option<MaskSpec>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 80,
            stack_dims: vec![8, 12, 16, 24, 16, 12],
            downsample_factors: vec![1, 2, 4, 8, 4, 2],
            num_layers: 1,
            num_heads: 2,
            attention_dim: 8,
            seed: 42,
            default_mask: None,
        }
    }
}

impl EncoderConfig {
    pub fn stacks(&self) -> Vec<StackConfig> {
        self.stack_dims
            .iter()
            .zip(&self.downsample_factors)
            .map(|(&embed_dim, &downsample_factor)| StackConfig {
                downsample_factor,
                embed_dim,
                num_layers: self.num_layers,
                num_heads: self.num_heads,
                attention_dim: self.attention_dim,
            })
            .collect()
    }

    pub fn max_dim(&self) -> usize {
        self.stack_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn max_factor(&self) -> usize {
        self.downsample_factors.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.stack_dims.is_empty() {
            return bad("at least one stack is required".into());
        }
        if self.stack_dims.len() != self.downsample_factors.len() {
            return bad(format!(
                "{} stack dims but {} downsample factors",
                self.stack_dims.len(),
                self.downsample_factors.len()
            ));
        }
        if self.stack_dims.contains(&0) {
            return bad("stack dims must be positive".into());
        }
        if self.num_layers == 0 || self.num_heads == 0 || self.attention_dim == 0 {
            return bad("num_layers, num_heads and attention_dim must be positive".into());
        }
        if let Some(f) = self
            .downsample_factors
            .iter()
            .find(|f| !ALLOWED_FACTORS.contains(f))
        {
            return bad(format!(
                "downsample factor {f} is not one of {ALLOWED_FACTORS:?}"
            ));
        }
        // U-Net schedule: rise to a single middle peak, then fall back
        let f = &self.downsample_factors;
        let mid = f.len() / 2;
        if f[0] != 1 {
            return bad("the first stack must run at the base rate".into());
        }
        let rises = f[..=mid].windows(2).all(|w| w[0] <= w[1]);
        let falls = f[mid..].windows(2).all(|w| w[0] >= w[1]);
        if !rises || !falls || f[mid] != self.max_factor() {
            return bad(format!(
                "factors {f:?} do not follow a U-Net schedule peaking at stack {mid}"
            ));
        }
        if let Some(m) = &self.default_mask {
            m.validate()?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let (mut chunk, mut left, mut rc) = (None, None, None);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| {
                    Error::InvalidConfig(format!("line {}: {key} = {v:?} is not a number", n + 1))
                })
            };
            let list =
                |v: &str| -> Result<Vec<usize>> { v.split(',').map(|x| num(x.trim())).collect() };
            match key {
                "feature_dim" => cfg.feature_dim = num(value)?,
                "stack_dims" => cfg.stack_dims = list(value)?,
                "downsample_factors" => cfg.downsample_factors = list(value)?,
                "num_layers" => cfg.num_layers = num(value)?,
                "num_heads" => cfg.num_heads = num(value)?,
                "attention_dim" => cfg.attention_dim = num(value)?,
                "seed" => {
                    cfg.seed = value.parse().map_err(|_| {
                        Error::InvalidConfig(format!("line {}: bad seed {value:?}", n + 1))
                    })?
                }
                "chunk" => chunk = Some(num(value)?),
                "left" => left = Some(value.parse::<LeftContext>()?),
                "rc" => rc = Some(num(value)?),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key {other:?}",
                        n + 1
                    )))
                }
            }
        }
        if chunk.is_some() || left.is_some() || rc.is_some() {
            let chunk =
                chunk.ok_or_else(|| Error::InvalidConfig("mask keys need `chunk`".into()))?;
            cfg.default_mask = Some(MaskSpec::new(
                chunk,
                left.unwrap_or(LeftContext::Full),
                rc.unwrap_or(0),
            )?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "feature_dim = {}", self.feature_dim);
        let _ = writeln!(out, "stack_dims = {}", join(&self.stack_dims));
        let _ = writeln!(
            out,
            "downsample_factors = {}",
            join(&self.downsample_factors)
        );
        let _ = writeln!(out, "num_layers = {}", self.num_layers);
        let _ = writeln!(out, "num_heads = {}", self.num_heads);
        let _ = writeln!(out, "attention_dim = {}", self.attention_dim);
        let _ = writeln!(out, "seed = {}", self.seed);
        if let Some(m) = &self.default_mask {
            let _ = writeln!(out, "chunk = {}", m.chunk_size());
            let _ = writeln!(out, "left = {}", m.left_context());
            let _ = writeln!(out, "rc = {}", m.right_context());
        }
        out
    }
}
