use std::io;

use thiserror::Error;

/// Errors produced by the engine, the streaming runtime and the serving harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mask spec: {0}")]
    InvalidSpec(String),

    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("audio: {0}")]
    Audio(String),

    #[error("feature file: {0}")]
    Format(String),

    #[error("stream: {0}")]
    Stream(&'static str),

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("clock misuse: final result at {final_at}s precedes last chunk at {sent_at}s")]
    Clock { sent_at: f64, final_at: f64 },

    #[error("invalid measurement: {0}")]
    Measurement(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("server error: {0}")]
    Server(String),

    #[error("connection: {0}")]
    Connection(String),

    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
