//! HTTP mock server: the wire protocol served by the batching simulator
//! running in real time.
//!
//! One actor task owns the simulator and advances it to the wall clock on
//! every interaction and at every step boundary. Request handlers talk to
//! the actor over a channel; a client closing its connection drops the
//! handler, whose guard sends a cancel for the sequence.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::pin::Pin;
use std::task::{Context, Poll};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::Stream;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::error::{Error, Result};
use crate::proto::{placeholder_text, placeholder_token, ErrorBody, FinalBody, GenerateRequest, PowerBody, StreamFrame, GENERATE_PATH, POWER_PATH};
use crate::sim::{Admission, BatchSim, SeqId, ServerSettings, StepRow};

/// Counters and the step log, retrieved when the server shuts down.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerStats {
    pub step_log: Vec<StepRow>,
    pub rejected_total: u64,
    pub admitted_total: u64,
}

enum SeqEvent {
    Token { index: u32 },
    Done { tokens: u32 },
}

enum SubmitReply {
    Rejected,
    Accepted { id: SeqId, events: mpsc::UnboundedReceiver<SeqEvent> },
}

enum Command {
    Submit { prompt: String, max_new_tokens: u32, reply: oneshot::Sender<SubmitReply> },
    Cancel { id: SeqId },
    Power { reply: oneshot::Sender<f64> },
    Stats { reply: oneshot::Sender<ServerStats> },
}

fn now_ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1_000.0
}

async fn sleep_until_boundary(t0: Instant, boundary_ms: Option<f64>) {
    match boundary_ms {
        Some(b) => tokio::time::sleep_until(t0 + Duration::from_secs_f64(b / 1_000.0)).await,
        None => std::future::pending().await,
    }
}

struct Actor {
    sim: BatchSim,
    subscribers: BTreeMap<SeqId, mpsc::UnboundedSender<SeqEvent>>,
    next_seq: SeqId,
}

impl Actor {
    fn catch_up(&mut self, now: f64) {
        for outcome in self.sim.advance_to(now) {
            for tok in &outcome.tokens {
                if let Some(tx) = self.subscribers.get(&tok.id) {
                    let _ = tx.send(SeqEvent::Token { index: tok.token_index });
                }
            }
            for comp in &outcome.completions {
                if let Some(tx) = self.subscribers.remove(&comp.id) {
                    let _ = tx.send(SeqEvent::Done { tokens: comp.tokens });
                }
            }
        }
    }

    fn handle(&mut self, command: Command, now: f64) {
        match command {
            Command::Submit { prompt, max_new_tokens, reply } => {
                let id = self.next_seq;
                self.next_seq += 1;
                match self.sim.submit(now, id, &prompt, max_new_tokens) {
                    Admission::Rejected => {
                        let _ = reply.send(SubmitReply::Rejected);
                    }
                    Admission::Accepted => {
                        let (tx, rx) = mpsc::unbounded_channel();
                        self.subscribers.insert(id, tx);
                        let _ = reply.send(SubmitReply::Accepted { id, events: rx });
                    }
                }
            }
            Command::Cancel { id } => {
                self.sim.cancel(id);
                self.subscribers.remove(&id);
            }
            Command::Power { reply } => {
                let _ = reply.send(self.sim.power_now());
            }
            Command::Stats { reply } => {
                let _ = reply.send(ServerStats {
                    step_log: self.sim.step_log().to_vec(),
                    rejected_total: self.sim.rejected_total(),
                    admitted_total: self.sim.admitted_total(),
                });
            }
        }
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>, t0: Instant) {
        loop {
            let boundary = self.sim.next_boundary();
            tokio::select! {
                biased;
                _ = sleep_until_boundary(t0, boundary), if boundary.is_some() => {
                    self.catch_up(now_ms(t0));
                }
                command = rx.recv() => {
                    let Some(command) = command else { break };
                    self.catch_up(now_ms(t0));
                    self.handle(command, now_ms(t0));
                }
            }
        }
    }
}

#[derive(Clone)]
struct AppState {
    cmd_tx: mpsc::UnboundedSender<Command>,
}

/// Cancels the sequence on drop unless the generation finished first.
struct CancelGuard {
    cmd_tx: mpsc::UnboundedSender<Command>,
    id: SeqId,
    armed: bool,
}

impl Drop for CancelGuard {
    fn drop(&mut self) {
        if self.armed {
            let _ = self.cmd_tx.send(Command::Cancel { id: self.id });
        }
    }
}

/// SSE frames for one sequence; disconnection cancels the sequence.
struct EventStream {
    events: mpsc::UnboundedReceiver<SeqEvent>,
    guard: CancelGuard,
    ended: bool,
}

impl Stream for EventStream {
    type Item = std::result::Result<Event, Infallible>;

    fn poll_next(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Option<Self::Item>> {
        if self.ended {
            return Poll::Ready(None);
        }
        match self.events.poll_recv(cx) {
            Poll::Pending => Poll::Pending,
            Poll::Ready(None) => {
                // Actor gone; nothing left to cancel.
                self.guard.armed = false;
                self.ended = true;
                Poll::Ready(None)
            }
            Poll::Ready(Some(SeqEvent::Token { index })) => {
                let frame = StreamFrame::Token { token: placeholder_token(index), index };
                Poll::Ready(Some(Ok(Event::default().data(frame.to_json()))))
            }
            Poll::Ready(Some(SeqEvent::Done { tokens })) => {
                self.guard.armed = false;
                self.ended = true;
                let frame = StreamFrame::Done { tokens };
                Poll::Ready(Some(Ok(Event::default().data(frame.to_json()))))
            }
        }
    }
}

async fn generate(
    State(state): State<AppState>,
    Json(body): Json<GenerateRequest>,
) -> Response {
    let (reply_tx, reply_rx) = oneshot::channel();
    let sent = state.cmd_tx.send(Command::Submit {
        prompt: body.prompt,
        max_new_tokens: body.max_new_tokens,
        reply: reply_tx,
    });
    if sent.is_err() {
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    let reply = match reply_rx.await {
        Ok(reply) => reply,
        Err(_) => return StatusCode::SERVICE_UNAVAILABLE.into_response(),
    };
    let (id, mut events) = match reply {
        SubmitReply::Rejected => {
            return (StatusCode::TOO_MANY_REQUESTS, Json(ErrorBody::overloaded()))
                .into_response();
        }
        SubmitReply::Accepted { id, events } => (id, events),
    };
    let mut guard = CancelGuard { cmd_tx: state.cmd_tx.clone(), id, armed: true };

    if body.stream {
        let stream = EventStream { events, guard, ended: false };
        return Sse::new(stream).into_response();
    }

    // Non-streaming: wait for completion; dropping this future (client
    // disconnect) fires the guard.
    while let Some(event) = events.recv().await {
        if let SeqEvent::Done { tokens } = event {
            guard.armed = false;
            return Json(FinalBody { text: placeholder_text(tokens), tokens }).into_response();
        }
    }
    StatusCode::SERVICE_UNAVAILABLE.into_response()
}

async fn power(State(state): State<AppState>) -> Response {
    let (reply_tx, reply_rx) = oneshot::channel();
    if state.cmd_tx.send(Command::Power { reply: reply_tx }).is_err() {
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    match reply_rx.await {
        Ok(watts) => Json(PowerBody { watts }).into_response(),
        Err(_) => StatusCode::SERVICE_UNAVAILABLE.into_response(),
    }
}

fn app(state: AppState) -> Router {
    Router::new()
        .route(GENERATE_PATH, post(generate))
        .route(POWER_PATH, get(power))
        .with_state(state)
}

/// A running mock server bound to a local address.
pub struct MockServer {
    addr: SocketAddr,
    cmd_tx: mpsc::UnboundedSender<Command>,
    shutdown_tx: watch::Sender<bool>,
    serve_handle: JoinHandle<()>,
    actor_handle: JoinHandle<()>,
}

impl MockServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub async fn start(settings: ServerSettings, addr: SocketAddr) -> Result<MockServer> {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::ServerStartup(format!("bind {addr}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::ServerStartup(e.to_string()))?;

        let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
        let actor = Actor { sim: BatchSim::new(settings), subscribers: BTreeMap::new(), next_seq: 1 };
        let t0 = Instant::now();
        let actor_handle = tokio::spawn(actor.run(cmd_rx, t0));

        let (shutdown_tx, mut shutdown_rx) = watch::channel(false);
        let router = app(AppState { cmd_tx: cmd_tx.clone() });
        let serve_handle = tokio::spawn(async move {
            let shutdown = async move {
                let _ = shutdown_rx.changed().await;
            };
            if let Err(e) =
                axum::serve(listener, router).with_graceful_shutdown(shutdown).await
            {
                log::error!("mock server stopped with error: {e}");
            }
        });

        Ok(MockServer { addr, cmd_tx, shutdown_tx, serve_handle, actor_handle })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Current counters and step log of the running server.
    pub async fn stats(&self) -> Result<ServerStats> {
        let (reply_tx, reply_rx) = oneshot::channel();
        self.cmd_tx
            .send(Command::Stats { reply: reply_tx })
            .map_err(|_| Error::ServerStartup("server actor stopped".into()))?;
        reply_rx.await.map_err(|_| Error::ServerStartup("server actor stopped".into()))
    }

    /// Stops accepting, drains in-flight requests, and returns final stats.
    pub async fn shutdown(self) -> Result<ServerStats> {
        let _ = self.shutdown_tx.send(true);
        let _ = self.serve_handle.await;
        let (reply_tx, reply_rx) = oneshot::channel();
        let stats = match self.cmd_tx.send(Command::Stats { reply: reply_tx }) {
            Ok(()) => reply_rx
                .await
                .map_err(|_| Error::ServerStartup("server actor stopped".into()))?,
            Err(_) => return Err(Error::ServerStartup("server actor stopped".into())),
        };
        drop(self.cmd_tx);
        let _ = self.actor_handle.await;
        Ok(stats)
    }
}
