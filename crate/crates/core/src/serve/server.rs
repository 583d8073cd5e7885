//! Websocket server: one session per connection.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::Semaphore;
use tokio::task::JoinHandle;
use tokio_tungstenite::accept_async_with_config;
use tokio_tungstenite::tungstenite::protocol::WebSocketConfig;
use tokio_tungstenite::tungstenite::Message;

use crate::encoder::Encoder;
use crate::error::{Error, Result};

use super::protocol::ServerMessage;
use super::session::{Inbound, Session, SessionLimits};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub max_sessions: usize,
    pub limits: SessionLimits,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_sessions: 256,
            limits: SessionLimits::default(),
        }
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections: AtomicU64,
    pub completed: AtomicU64,
    pub rejected: AtomicU64,
    /// Session handlers that panicked.
    pub panics: AtomicU64,
}

impl ServerStats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::SeqCst)
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stats: Arc<ServerStats>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    pub fn is_running(&self) -> bool {
        !self.task.is_finished()
    }

    pub fn shutdown(self) {
        self.task.abort();
    }
}

/// Binds `addr` and serves in a background task.
pub async fn spawn_server(
    addr: &str,
    encoder: Arc<Encoder>,
    cfg: ServerConfig,
) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let stats = Arc::new(ServerStats::default());
    let task = tokio::spawn(accept_loop(listener, encoder, cfg, Arc::clone(&stats)));
    Ok(ServerHandle { addr, stats, task })
}

/// Serves on `listener` until the process exits.
pub async fn run_server(
    listener: TcpListener,
    encoder: Arc<Encoder>,
    cfg: ServerConfig,
) -> Result<()> {
    accept_loop(listener, encoder, cfg, Arc::new(ServerStats::default())).await;
    Err(Error::Server("listener closed".into()))
}

async fn accept_loop(
    listener: TcpListener,
    encoder: Arc<Encoder>,
    cfg: ServerConfig,
    stats: Arc<ServerStats>,
) {
    let slots = Arc::new(Semaphore::new(cfg.max_sessions));
    let mut next_id = 0u64;
    loop {
        let (socket, peer) = match listener.accept().await {
            Ok(c) => c,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        next_id += 1;
        stats.connections.fetch_add(1, Ordering::SeqCst);
        let id = next_id;
        let permit = Arc::clone(&slots).try_acquire_owned().ok();
        let encoder = Arc::clone(&encoder);
        let limits = cfg.limits;
        let stats_for_task = Arc::clone(&stats);
        let handler = tokio::spawn(async move {
            match permit {
                Some(_permit) => {
                    if handle_connection(socket, id, encoder, limits).await {
                        stats_for_task.completed.fetch_add(1, Ordering::SeqCst);
                    }
                }
                None => {
                    stats_for_task.rejected.fetch_add(1, Ordering::SeqCst);
                    reject(socket, limits).await;
                }
            }
        });
        let stats = Arc::clone(&stats);
        tokio::spawn(async move {
            if let Err(e) = handler.await {
                if e.is_panic() {
                    stats.panics.fetch_add(1, Ordering::SeqCst);
                    log::error!("session {id} from {peer} panicked");
                }
            }
        });
    }
}

fn ws_config(limits: SessionLimits) -> WebSocketConfig {
    WebSocketConfig::default()
        .max_message_size(Some(limits.max_message_bytes))
        .max_frame_size(Some(limits.max_message_bytes))
}

async fn reject(socket: TcpStream, limits: SessionLimits) {
    if let Ok(mut ws) = accept_async_with_config(socket, Some(ws_config(limits))).await {
        let msg = ServerMessage::Error {
            message: "server is at its session limit".into(),
        };
        let _ = ws.send(Message::text(msg.to_json())).await;
        let _ = ws.close(None).await;
    }
}

/// Runs one session; true when it ended with a final transcript.
async fn handle_connection(
    socket: TcpStream,
    id: u64,
    encoder: Arc<Encoder>,
    limits: SessionLimits,
) -> bool {
    let _ = socket.set_nodelay(true);
    let mut ws = match accept_async_with_config(socket, Some(ws_config(limits))).await {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!("session {id}: handshake failed: {e}");
            return false;
        }
    };
    let mut session = Session::new(id, encoder, limits);
    while let Some(msg) = ws.next().await {
        let reply = match &msg {
            Ok(Message::Text(t)) => session.handle(Inbound::Text(t.as_str())),
            Ok(Message::Binary(b)) => session.handle(Inbound::Binary(b)),
            Ok(Message::Close(_)) => break,
            Ok(_) => continue,
            Err(e) => {
                log::debug!("session {id}: {e}");
                break;
            }
        };
        let mut failed = false;
        for m in reply.messages {
            failed |= ws.send(Message::text(m.to_json())).await.is_err();
        }
        if reply.close || failed {
            let _ = ws.close(None).await;
            break;
        }
    }
    let s = session.summary();
    log::info!(
        "session_id={} audio_s={:.3} busy_s={:.6} tokens={}",
        s.session_id,
        s.audio_s,
        s.busy_s,
        s.tokens
    );
    s.completed
}
