//! Wire format. Text frames carry JSON control messages, binary frames carry
//! audio only: 16 kHz mono s16le PCM, or one ZSF1 feature blob per message.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{LeftContext, MaskSpec};

pub const PCM_SAMPLE_RATE: usize = 16_000;
/// 500 ms of PCM.
pub const PCM_CHUNK_BYTES: usize = 16_000;
/// 500 ms of 100 Hz features.
pub const FEATURE_CHUNK_FRAMES: usize = 50;

pub const MAX_CHUNK_FRAMES: usize = 512;
pub const MAX_RC_FRAMES: usize = 1024;
pub const MAX_LEFT_FRAMES: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    #[default]
    Pcm,
    Features,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartMessage {
    pub chunk: usize,
    pub rc: usize,
    #[serde(default = "full_left")]
    pub left: LeftContext,
    #[serde(default)]
    pub input: InputKind,
}

fn full_left() -> LeftContext {
    LeftContext::Full
}

impl StartMessage {
    pub fn new(spec: &MaskSpec, input: InputKind) -> Self {
        Self {
            chunk: spec.chunk_size(),
            rc: spec.right_context(),
            left: spec.left_context(),
            input,
        }
    }

    /// Checks the supported ranges and builds the session's mask.
    pub fn mask_spec(&self) -> Result<MaskSpec> {
        if !(1..=MAX_CHUNK_FRAMES).contains(&self.chunk) {
            return Err(Error::Protocol(format!(
                "chunk must be in 1..={MAX_CHUNK_FRAMES}"
            )));
        }
        if self.rc > MAX_RC_FRAMES {
            return Err(Error::Protocol(format!(
                "rc must be at most {MAX_RC_FRAMES}"
            )));
        }
        if matches!(self.left, LeftContext::Frames(n) if n > MAX_LEFT_FRAMES) {
            return Err(Error::Protocol(format!(
                "left must be at most {MAX_LEFT_FRAMES} or \"full\""
            )));
        }
        MaskSpec::new(self.chunk, self.left, self.rc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Start(StartMessage),
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Partial { tokens: Vec<u32>, busy_s: f64 },
    Final { tokens: Vec<u32>, busy_s: f64 },
    Error { message: String },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("bad control message: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("control messages always serialize")
    }
}

impl ServerMessage {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("bad server message: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}
