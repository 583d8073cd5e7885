//! Websocket streaming service, headless client and stub greedy decoder.
//!
//! ```text
//! client                                   server
//!   {"type":"start","chunk":32,"rc":64,"left":128,"input":"pcm"}  ->
//!   <binary: 500 ms of audio>                                      ->
//!                        <- {"type":"partial","tokens":[..],"busy_s":x}
//!   {"type":"end"}                                                 ->
//!                        <- {"type":"final","tokens":[..],"busy_s":x}
//! ```

pub mod client;
pub mod decode;
pub mod protocol;
pub mod server;
pub mod session;

pub use client::{client_stream, CallAudio, CallOutcome, ClientOptions};
pub use decode::{decode_stub, IncrementalDecoder, StubDecoder, StubTranscript, VOCAB_SIZE};
pub use protocol::{ClientMessage, InputKind, ServerMessage, StartMessage};
pub use server::{run_server, spawn_server, ServerConfig, ServerHandle};
pub use session::{Inbound, Reply, Session, SessionLimits};
