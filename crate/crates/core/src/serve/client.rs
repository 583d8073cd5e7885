//! Headless client: paces audio in 500 ms messages and measures final-chunk
//! latency.

use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::time::{sleep_until, timeout, Instant};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

use crate::bench::{now_s, LatencyRecord};
use crate::encoder::zsf;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::protocol::{
    ClientMessage, InputKind, ServerMessage, StartMessage, FEATURE_CHUNK_FRAMES, PCM_CHUNK_BYTES,
    PCM_SAMPLE_RATE,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientOptions {
    /// Gap between consecutive audio messages; 500 ms is real time.
    pub pacing: Duration,
    /// Limit for connecting and for waiting on the final message.
    pub timeout: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            pacing: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CallAudio {
    Pcm(Vec<i16>),
    /// 100 Hz feature frames.
    Features(Matrix<f32>),
}

impl CallAudio {
    pub fn kind(&self) -> InputKind {
        match self {
            CallAudio::Pcm(_) => InputKind::Pcm,
            CallAudio::Features(_) => InputKind::Features,
        }
    }

    pub fn duration_s(&self) -> f64 {
        match self {
            CallAudio::Pcm(s) => s.len() as f64 / PCM_SAMPLE_RATE as f64,
            CallAudio::Features(f) => f.rows() as f64 / 100.0,
        }
    }

    /// The binary messages carrying this audio, 500 ms each.
    pub fn messages(&self) -> Vec<Vec<u8>> {
        match self {
            CallAudio::Pcm(samples) => samples
                .chunks(PCM_CHUNK_BYTES / 2)
                .map(|c| c.iter().flat_map(|s| s.to_le_bytes()).collect())
                .collect(),
            CallAudio::Features(f) => (0..f.rows())
                .step_by(FEATURE_CHUNK_FRAMES)
                .map(|i| {
                    let rows: Vec<&[f32]> =
                        f.row_iter().skip(i).take(FEATURE_CHUNK_FRAMES).collect();
                    zsf::encode(&Matrix::from_rows(&rows).unwrap())
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallOutcome {
    /// Full transcript from the final message.
    pub tokens: Vec<u32>,
    /// Tokens delivered in partial messages, in order.
    pub partial_tokens: Vec<u32>,
    /// `busy_s` of every partial message, in order.
    pub partial_busy_s: Vec<f64>,
    pub busy_s: f64,
    pub record: LatencyRecord,
    /// Send time of every audio message.
    pub send_times: Vec<f64>,
}

struct Received {
    tokens: Vec<u32>,
    busy_s: f64,
    at: f64,
    partial_tokens: Vec<u32>,
    partial_busy_s: Vec<f64>,
}

/// Streams one call to `server` (`host:port` or a `ws://` URL).
pub async fn client_stream(
    server: &str,
    call_id: &str,
    audio: &CallAudio,
    start: StartMessage,
    opts: ClientOptions,
) -> Result<CallOutcome> {
    let url = if server.starts_with("ws://") {
        server.to_string()
    } else {
        format!("ws://{server}/")
    };
    let (ws, _) = timeout(opts.timeout, connect_async(url.as_str()))
        .await
        .map_err(|_| Error::Timeout(opts.timeout))?
        .map_err(|e| Error::Connection(e.to_string()))?;
    let (mut tx, mut rx) = ws.split();

    let reader = tokio::spawn(async move {
        let mut partial_tokens = Vec::new();
        let mut partial_busy_s = Vec::new();
        while let Some(msg) = rx.next().await {
            let text = match msg {
                Ok(Message::Text(t)) => t,
                Ok(Message::Close(_)) => break,
                Ok(_) => continue,
                Err(e) => return Err(Error::Connection(e.to_string())),
            };
            match ServerMessage::parse(text.as_str())? {
                ServerMessage::Partial { tokens, busy_s } => {
                    partial_tokens.extend(tokens);
                    partial_busy_s.push(busy_s);
                }
                ServerMessage::Final { tokens, busy_s } => {
                    return Ok(Received {
                        tokens,
                        busy_s,
                        at: now_s(),
                        partial_tokens,
                        partial_busy_s,
                    })
                }
                ServerMessage::Error { message } => return Err(Error::Server(message)),
            }
        }
        Err(Error::Connection(
            "server closed the session before the final message".into(),
        ))
    });

    let start = StartMessage {
        input: audio.kind(),
        ..start
    };
    let mut send_times = Vec::new();
    let sent = async {
        tx.send(Message::text(ClientMessage::Start(start).to_json()))
            .await?;
        let t0 = Instant::now();
        for (i, chunk) in audio.messages().into_iter().enumerate() {
            sleep_until(t0 + opts.pacing * i as u32).await;
            if reader.is_finished() {
                break;
            }
            tx.send(Message::binary(chunk)).await?;
            send_times.push(now_s());
        }
        let last = now_s();
        tx.send(Message::text(ClientMessage::End.to_json())).await?;
        Ok::<_, tokio_tungstenite::tungstenite::Error>(last)
    }
    .await;

    let received = timeout(opts.timeout, reader)
        .await
        .map_err(|_| Error::Timeout(opts.timeout))?
        .map_err(|e| Error::Connection(e.to_string()))?;
    let received = received?;
    let last_chunk_sent_at = sent.map_err(|e| Error::Connection(e.to_string()))?;
    let _ = tx.close().await;
    Ok(CallOutcome {
        tokens: received.tokens,
        partial_tokens: received.partial_tokens,
        partial_busy_s: received.partial_busy_s,
        busy_s: received.busy_s,
        record: LatencyRecord {
            call_id: call_id.to_string(),
            last_chunk_sent_at,
            final_result_at: received.at,
        },
        send_times,
    })
}
