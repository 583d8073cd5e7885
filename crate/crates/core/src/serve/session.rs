//! Transport-free session state machine. The server feeds it websocket
//! frames and forwards whatever it answers.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::encoder::features::{pcm_s16le_to_f32, FeatureStream, FEATURE_RATE_HZ, NUM_BINS};
use crate::encoder::{zsf, Encoder, FeatureSequence};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stream::StreamState;

use super::decode::{IncrementalDecoder, StubDecoder};
use super::protocol::{ClientMessage, InputKind, ServerMessage, StartMessage, PCM_SAMPLE_RATE};

/// Silence run that ends a session when the silence endpoint is enabled.
pub const SILENCE_ENDPOINT_MS: usize = 800;
const ENERGY_WINDOW: usize = PCM_SAMPLE_RATE / 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionLimits {
    pub max_message_bytes: usize,
    /// Mean-square energy below which a 10 ms PCM window counts as silent.
    /// `None` disables the silence endpoint.
    pub silence_threshold: Option<f32>,
}

impl Default for SessionLimits {
    fn default() -> Self {
        Self {
            max_message_bytes: 1 << 20,
            silence_threshold: None,
        }
    }
}

/// A websocket frame as seen by the session.
#[derive(Debug, Clone, Copy)]
pub enum Inbound<'a> {
    Text(&'a str),
    Binary(&'a [u8]),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reply {
    pub messages: Vec<ServerMessage>,
    /// The connection must be closed after sending `messages`.
    pub close: bool,
}

impl Reply {
    fn send(m: ServerMessage) -> Self {
        Self {
            messages: vec![m],
            close: false,
        }
    }

    fn fail(e: Error) -> Self {
        Self {
            messages: vec![ServerMessage::Error {
                message: e.to_string(),
            }],
            close: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub session_id: u64,
    pub start: StartMessage,
}

struct Engine {
    config: SessionConfig,
    stream: StreamState,
    fbank: Option<FeatureStream>,
    decoder: IncrementalDecoder,
    silent_samples: usize,
    heard_audio: bool,
}

enum Phase {
    AwaitStart,
    Streaming(Box<Engine>),
    Closed,
}

/// Summary logged when a session ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub session_id: u64,
    pub audio_s: f64,
    pub busy_s: f64,
    pub tokens: usize,
    pub completed: bool,
}

pub struct Session {
    id: u64,
    encoder: Arc<Encoder>,
    limits: SessionLimits,
    phase: Phase,
    busy: Duration,
    audio_s: f64,
    tokens: usize,
    completed: bool,
}

impl Session {
    pub fn new(id: u64, encoder: Arc<Encoder>, limits: SessionLimits) -> Self {
        Self {
            id,
            encoder,
            limits,
            phase: Phase::AwaitStart,
            busy: Duration::ZERO,
            audio_s: 0.0,
            tokens: 0,
            completed: false,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn config(&self) -> Option<SessionConfig> {
        match &self.phase {
            Phase::Streaming(e) => Some(e.config),
            _ => None,
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.phase, Phase::Closed)
    }

    pub fn busy_s(&self) -> f64 {
        self.busy.as_secs_f64()
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id,
            audio_s: self.audio_s,
            busy_s: self.busy_s(),
            tokens: self.tokens,
            completed: self.completed,
        }
    }

    pub fn handle(&mut self, msg: Inbound<'_>) -> Reply {
        let size = match msg {
            Inbound::Text(t) => t.len(),
            Inbound::Binary(b) => b.len(),
        };
        let reply = if size > self.limits.max_message_bytes {
            Reply::fail(Error::Protocol(format!(
                "message of {size} bytes exceeds the limit"
            )))
        } else {
            match std::mem::replace(&mut self.phase, Phase::Closed) {
                Phase::AwaitStart => self.on_opening(msg),
                Phase::Streaming(engine) => self.on_streaming(engine, msg),
                Phase::Closed => Reply::fail(Error::Protocol("session already ended".into())),
            }
        };
        if reply.close {
            self.phase = Phase::Closed;
        }
        reply
    }

    fn on_opening(&mut self, msg: Inbound<'_>) -> Reply {
        let Inbound::Text(text) = msg else {
            return Reply::fail(Error::Protocol("expected a start message".into()));
        };
        let start = match ClientMessage::parse(text) {
            Ok(ClientMessage::Start(s)) => s,
            Ok(ClientMessage::End) => {
                return Reply::fail(Error::Protocol("end before start".into()))
            }
            Err(e) => return Reply::fail(e),
        };
        match self.open(start) {
            Ok(engine) => {
                self.phase = Phase::Streaming(Box::new(engine));
                Reply::default()
            }
            Err(e) => Reply::fail(e),
        }
    }

    fn open(&self, start: StartMessage) -> Result<Engine> {
        let spec = start.mask_spec()?;
        let cfg = self.encoder.config();
        if start.input == InputKind::Pcm && cfg.feature_dim != NUM_BINS {
            return Err(Error::Protocol(format!(
                "this model takes {}-dim features, not PCM",
                cfg.feature_dim
            )));
        }
        Ok(Engine {
            config: SessionConfig {
                session_id: self.id,
                start,
            },
            stream: StreamState::open(Arc::clone(&self.encoder), spec)?,
            fbank: (start.input == InputKind::Pcm).then(FeatureStream::new),
            decoder: IncrementalDecoder::new(StubDecoder::new(self.encoder.output_dim(), cfg.seed)),
            silent_samples: 0,
            heard_audio: false,
        })
    }

    fn on_streaming(&mut self, mut engine: Box<Engine>, msg: Inbound<'_>) -> Reply {
        let reply = match msg {
            Inbound::Text(text) => match ClientMessage::parse(text) {
                Ok(ClientMessage::End) => return self.finish(engine),
                Ok(ClientMessage::Start(_)) => {
                    Reply::fail(Error::Protocol("session already started".into()))
                }
                Err(e) => Reply::fail(e),
            },
            Inbound::Binary(bytes) => match self.on_audio(&mut engine, bytes) {
                Ok(true) => return self.finish(engine),
                Ok(false) => {
                    let fresh = engine.decoder.transcript().len() - self.tokens;
                    let tokens = engine.decoder.transcript().tokens[self.tokens..].to_vec();
                    self.tokens += fresh;
                    if tokens.is_empty() {
                        Reply::default()
                    } else {
                        Reply::send(ServerMessage::Partial {
                            tokens,
                            busy_s: self.busy_s(),
                        })
                    }
                }
                Err(e) => Reply::fail(e),
            },
        };
        if !reply.close {
            self.phase = Phase::Streaming(engine);
        }
        reply
    }

    /// Pushes one audio message. Returns true when the silence endpoint fired.
    fn on_audio(&mut self, engine: &mut Engine, bytes: &[u8]) -> Result<bool> {
        let began = Instant::now();
        let mut endpoint = false;
        let features = if engine.fbank.is_some() {
            if bytes.len() % 2 != 0 {
                return Err(Error::Audio("PCM message has an odd byte count".into()));
            }
            let samples = pcm_s16le_to_f32(bytes);
            self.audio_s += samples.len() as f64 / PCM_SAMPLE_RATE as f64;
            if let Some(threshold) = self.limits.silence_threshold {
                endpoint = engine.track_silence(&samples, threshold);
            }
            engine
                .fbank
                .as_mut()
                .map(|f| f.push(&samples))
                .expect("PCM session")
        } else {
            let frames = zsf::decode(bytes)?;
            self.audio_s += frames.rows() as f64 / FEATURE_RATE_HZ;
            frames
        };
        self.push_frames(engine, features)?;
        self.busy += began.elapsed();
        Ok(endpoint)
    }

    fn push_frames(&mut self, engine: &mut Engine, frames: Matrix<f32>) -> Result<()> {
        let emitted = engine
            .stream
            .push(&FeatureSequence::at_input_rate(frames)?)?;
        engine.decoder.push_base(&emitted.hidden);
        Ok(())
    }

    fn finish(&mut self, mut engine: Box<Engine>) -> Reply {
        let began = Instant::now();
        let emitted = match engine.stream.finalize() {
            Ok(e) => e,
            Err(e) => return Reply::fail(e),
        };
        engine.decoder.push_base(&emitted.hidden);
        self.busy += began.elapsed();
        let tokens = engine.decoder.transcript().tokens.clone();
        self.tokens = tokens.len();
        self.completed = true;
        Reply {
            messages: vec![ServerMessage::Final {
                tokens,
                busy_s: self.busy_s(),
            }],
            close: true,
        }
    }
}

impl Engine {
    fn track_silence(&mut self, samples: &[f32], threshold: f32) -> bool {
        let needed = SILENCE_ENDPOINT_MS * PCM_SAMPLE_RATE / 1000;
        for w in samples.chunks(ENERGY_WINDOW) {
            let energy = w.iter().map(|s| s * s).sum::<f32>() / w.len() as f32;
            if energy < threshold {
                self.silent_samples += w.len();
            } else {
                self.silent_samples = 0;
                self.heard_audio = true;
            }
        }
        self.heard_audio && self.silent_samples >= needed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::sched::SplitMix64;

    fn session(limits: SessionLimits) -> Session {
        Session::new(
            1,
            Arc::new(Encoder::new(EncoderConfig::default()).unwrap()),
            limits,
        )
    }

    fn pcm(seconds: f64, amp: f64, seed: u64) -> Vec<u8> {
        let mut rng = SplitMix64::new(seed);
        let n = (seconds * PCM_SAMPLE_RATE as f64) as usize;
        (0..n)
            .flat_map(|_| ((rng.uniform(-amp, amp) * 32767.0) as i16).to_le_bytes())
            .collect()
    }

    fn start(rc: usize) -> String {
        format!(r#"{{"type":"start","chunk":32,"rc":{rc},"left":128,"input":"pcm"}}"#)
    }

    fn run(rc: usize, audio: &[u8]) -> (usize, Vec<u32>, Vec<u32>) {
        let mut s = session(SessionLimits::default());
        assert_eq!(s.handle(Inbound::Text(&start(rc))), Reply::default());
        let mut partials = 0;
        let mut streamed = Vec::new();
        for piece in audio.chunks(16_000) {
            for m in s.handle(Inbound::Binary(piece)).messages {
                let ServerMessage::Partial { tokens, .. } = m else {
                    panic!("{m:?}")
                };
                partials += 1;
                streamed.extend(tokens);
            }
        }
        let r = s.handle(Inbound::Text(r#"{"type":"end"}"#));
        assert!(r.close && s.is_closed());
        let ServerMessage::Final { tokens, busy_s } = &r.messages[0] else {
            panic!()
        };
        assert!(*busy_s >= 0.0);
        (partials, streamed, tokens.clone())
    }

    #[test]
    fn empty_session_gives_empty_final() {
        assert_eq!(run(0, &[]), (0, vec![], vec![]));
    }

    #[test]
    fn partials_follow_deadlines() {
        let audio = pcm(2.0, 0.3, 5);
        let (partials, streamed, fin) = run(0, &audio);
        assert!(partials >= 1);
        assert_eq!(&fin[..streamed.len()], &streamed[..]);
        let (partials, _, fin) = run(256, &audio);
        assert_eq!(partials, 0);
        assert!(!fin.is_empty());
    }

    #[test]
    fn protocol_errors_close() {
        let mut s = session(SessionLimits::default());
        let r = s.handle(Inbound::Binary(&[1, 2]));
        assert!(r.close && matches!(r.messages[0], ServerMessage::Error { .. }));

        let mut s = session(SessionLimits::default());
        s.handle(Inbound::Text(&start(0)));
        assert!(s.handle(Inbound::Binary(&[1, 2, 3])).close);

        let mut s = session(SessionLimits::default());
        s.handle(Inbound::Text(&start(0)));
        s.handle(Inbound::Text(r#"{"type":"end"}"#));
        let r = s.handle(Inbound::Binary(&[0, 0]));
        assert!(r.close && matches!(r.messages[0], ServerMessage::Error { .. }));

        let mut s = session(SessionLimits {
            max_message_bytes: 10,
            ..Default::default()
        });
        s.handle(Inbound::Text(r#"{"type":"start","chunk":1,"rc":0}"#));
        assert!(s.handle(Inbound::Binary(&[0; 12])).close);
    }

    #[test]
    fn silence_endpoint_finalizes() {
        let mut s = session(SessionLimits {
            silence_threshold: Some(1e-4),
            ..Default::default()
        });
        s.handle(Inbound::Text(&start(0)));
        let mut audio = pcm(1.0, 0.3, 6);
        audio.extend(vec![0u8; 2 * 16_000]);
        let mut last = Reply::default();
        for piece in audio.chunks(16_000) {
            last = s.handle(Inbound::Binary(piece));
            if last.close {
                break;
            }
        }
        assert!(last.close);
        assert!(matches!(last.messages[0], ServerMessage::Final { .. }));
    }
}
