//! Live scenario service: one frame loop drives the tracker and fans
//! messages out to websocket clients.
//!
//! Endpoints:
//! - `GET /stream` websocket of [`StreamMessage`] JSON, one per frame.
//!   `?history=N` first replays up to N buffered messages. Text frames
//!   sent by the client are read as [`ScenarioCommand`]s.
//! - `POST /command` a [`ScenarioCommand`] JSON body.
//! - `GET /health` [`Health`] JSON.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use helideck::sim::{trajectory_frame, NoisePreset, ScenarioConfig, Scene};
use helideck::tracker::{FrameInput, Tracker};
use helideck::wire::{ScenarioCommand, ScenarioStatus, StreamMessage};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::config::AppContext;

/// Messages kept for late joiners.
pub const HISTORY_LEN: usize = 600;
/// Per-client backlog before the oldest messages are dropped.
pub const CLIENT_QUEUE: usize = 64;
const COMMAND_QUEUE: usize = 64;
const FPS_WINDOW: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub fps: f64,
    pub clients: usize,
    pub frame_id: u64,
    pub paused: bool,
    pub sea_state: f64,
    pub noise_preset: Option<NoisePreset>,
}

struct Published {
    seq: u64,
    text: Utf8Bytes,
}

struct Status {
    frame_id: u64,
    scenario: ScenarioStatus,
    published: VecDeque<Instant>,
}

struct Shared {
    hub: broadcast::Sender<Arc<Published>>,
    history: Mutex<VecDeque<Arc<Published>>>,
    commands: mpsc::Sender<ScenarioCommand>,
    clients: AtomicUsize,
    status: Mutex<Status>,
}

impl Shared {
    fn health(&self) -> Health {
        let s = self.status.lock().unwrap();
        let fps = match (s.published.front(), s.published.back()) {
            (Some(a), Some(b)) if s.published.len() > 1 && b > a => {
                (s.published.len() - 1) as f64 / (*b - *a).as_secs_f64()
            }
            _ => 0.0,
        };
        Health {
            fps,
            clients: self.clients.load(Ordering::Relaxed),
            frame_id: s.frame_id,
            paused: s.scenario.paused,
            sea_state: s.scenario.sea_state,
            noise_preset: s.scenario.noise_preset,
        }
    }
}

/// Owns the scenario and the tracker; nothing else mutates them.
struct FrameLoop {
    scenario: ScenarioConfig,
    scene: Scene,
    tracker: Tracker,
    preset: Option<NoisePreset>,
    frame_id: u64,
    paused: bool,
    seq: u64,
}

impl FrameLoop {
    fn new(ctx: &AppContext) -> Self {
        Self {
            preset: NoisePreset::ALL.into_iter().find(|p| p.model() == ctx.scenario.noise),
            scenario: ctx.scenario.clone(),
            scene: ctx.scene.clone(),
            tracker: ctx.new_tracker(),
            frame_id: 0,
            paused: false,
            seq: 0,
        }
    }

    fn status(&self) -> ScenarioStatus {
        ScenarioStatus { sea_state: self.scenario.sea_state, noise_preset: self.preset, paused: self.paused }
    }

    fn apply(&mut self, cmd: ScenarioCommand) {
        match cmd {
            ScenarioCommand::SetSeaState(s) => self.scenario.sea_state = s,
            ScenarioCommand::SetNoisePreset(p) => {
                self.scenario.noise = p.model();
                self.preset = Some(p);
            }
            // An implausible result leaves the camera as it was.
            ScenarioCommand::PerturbCamera(p) => {
                if let Ok(e) = p.apply(&self.scene.camera.extrinsics) {
                    self.scene.camera.extrinsics = e;
                }
            }
            ScenarioCommand::Pause => self.paused = true,
            ScenarioCommand::Resume => self.paused = false,
            ScenarioCommand::Restart => {
                self.frame_id = 0;
                self.tracker.reset();
            }
        }
    }

    fn step(&mut self) -> StreamMessage {
        let id = self.frame_id;
        let (result, observations) = match trajectory_frame(&self.scenario, &self.scene, id) {
            Ok(frame) => (self.tracker.process_frame(FrameInput::from(&frame)), frame.observations),
            Err(_) => {
                let input = FrameInput { frame_id: id, observations: &[], markings: &[], bbox: None };
                (self.tracker.process_frame(input), Vec::new())
            }
        };
        self.frame_id += 1;
        let timestamp_ms = (id as f64 * 1e3 / self.scenario.frame_rate).round() as u64;
        StreamMessage::from_result(&result, &observations, timestamp_ms, self.status())
    }

    async fn run(
        mut self,
        shared: Arc<Shared>,
        mut commands: mpsc::Receiver<ScenarioCommand>,
        mut stop: oneshot::Receiver<()>,
    ) {
        let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / self.scenario.frame_rate));
        loop {
            tokio::select! {
                _ = ticker.tick() => {}
                _ = &mut stop => break,
            }
            while let Ok(cmd) = commands.try_recv() {
                self.apply(cmd);
            }
            if !self.paused {
                let text = self.step().to_json();
                self.seq += 1;
                let msg = Arc::new(Published { seq: self.seq, text: text.into() });
                {
                    let mut h = shared.history.lock().unwrap();
                    if h.len() == HISTORY_LEN {
                        h.pop_front();
                    }
                    h.push_back(msg.clone());
                }
                // No receivers is fine.
                let _ = shared.hub.send(msg);
            }
            let now = Instant::now();
            let mut s = shared.status.lock().unwrap();
            s.frame_id = self.frame_id;
            s.scenario = self.status();
            if !self.paused {
                s.published.push_back(now);
            }
            while s.published.front().is_some_and(|t| now.duration_since(*t) > FPS_WINDOW) {
                s.published.pop_front();
            }
        }
    }
}

pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    frames: JoinHandle<()>,
    server: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    /// Stops the frame loop, which ends every client session, then the
    /// listener.
    pub async fn shutdown(mut self) -> Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.frames.await.context("frame loop panicked")?;
        self.server.await.context("server task panicked")?.context("server failed")
    }
}

/// Binds `addr` and starts serving. Fails if the port is taken.
pub async fn start(ctx: AppContext, addr: SocketAddr) -> Result<ServiceHandle> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot listen on {addr}"))?;
    let addr = listener.local_addr()?;
    let (hub, _) = broadcast::channel(CLIENT_QUEUE);
    let (cmd_tx, cmd_rx) = mpsc::channel(COMMAND_QUEUE);
    let frame_loop = FrameLoop::new(&ctx);
    let shared = Arc::new(Shared {
        hub,
        history: Mutex::new(VecDeque::with_capacity(HISTORY_LEN)),
        commands: cmd_tx,
        clients: AtomicUsize::new(0),
        status: Mutex::new(Status { frame_id: 0, scenario: frame_loop.status(), published: VecDeque::new() }),
    });
    let (stop_tx, stop_rx) = oneshot::channel();
    let (closed_tx, closed_rx) = oneshot::channel::<()>();
    let frames = tokio::spawn({
        let shared = shared.clone();
        async move {
            frame_loop.run(shared, cmd_rx, stop_rx).await;
            let _ = closed_tx.send(());
        }
    });
    let app = Router::new()
        .route("/stream", get(stream))
        .route("/command", post(command))
        .route("/health", get(health))
        .with_state(shared);
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = closed_rx.await;
            })
            .await
    });
    Ok(ServiceHandle { addr, stop: Some(stop_tx), frames, server })
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    #[serde(default)]
    history: usize,
}

async fn stream(ws: WebSocketUpgrade, Query(q): Query<StreamQuery>, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, shared, q.history.min(HISTORY_LEN)))
}

struct ClientGuard(Arc<Shared>);

impl Drop for ClientGuard {
    fn drop(&mut self) {
        self.0.clients.fetch_sub(1, Ordering::Relaxed);
    }
}

async fn session(socket: WebSocket, shared: Arc<Shared>, history: usize) {
    // Subscribe before the snapshot so nothing falls in between.
    let mut rx = shared.hub.subscribe();
    let (backlog, mut last_seq) = {
        let h = shared.history.lock().unwrap();
        let backlog: Vec<Arc<Published>> = h.iter().skip(h.len().saturating_sub(history)).cloned().collect();
        (backlog, h.back().map_or(0, |m| m.seq))
    };
    shared.clients.fetch_add(1, Ordering::Relaxed);
    let _guard = ClientGuard(shared.clone());
    let (mut sink, mut incoming) = socket.split();
    for m in backlog {
        if sink.send(Message::Text(m.text.clone())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(m) => {
                    if m.seq <= last_seq {
                        continue;
                    }
                    last_seq = m.seq;
                    if sink.send(Message::Text(m.text.clone())).await.is_err() {
                        break;
                    }
                }
                // Slow client: the oldest queued messages were dropped.
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
            frame = incoming.next() => match frame {
                Some(Ok(Message::Text(text))) => {
                    if let Err(reply) = submit(&shared, text.as_str()) {
                        let body = serde_json::json!({ "error": reply.1 }).to_string();
                        if sink.send(Message::Text(body.into())).await.is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = sink.close().await;
}

fn submit(shared: &Shared, text: &str) -> Result<ScenarioCommand, (StatusCode, String)> {
    let cmd = ScenarioCommand::parse(text).map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()))?;
    shared.commands.try_send(cmd).map_err(|e| match e {
        mpsc::error::TrySendError::Full(_) => (StatusCode::SERVICE_UNAVAILABLE, "command queue full".to_string()),
        mpsc::error::TrySendError::Closed(_) => (StatusCode::SERVICE_UNAVAILABLE, "scenario stopped".to_string()),
    })?;
    Ok(cmd)
}

async fn command(State(shared): State<Arc<Shared>>, body: String) -> Response {
    match submit(&shared, &body) {
        Ok(cmd) => (StatusCode::ACCEPTED, Json(serde_json::json!({ "accepted": cmd }))).into_response(),
        Err((status, reason)) => (status, Json(serde_json::json!({ "error": reason }))).into_response(),
    }
}

async fn health(State(shared): State<Arc<Shared>>) -> Json<Health> {
    Json(shared.health())
}
