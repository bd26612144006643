use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use arco_core::canonical::{self, Digest};
use arco_core::ids::{PeerId, PeerRole, RoomId, SessionId, TimestampMs};
use arco_core::protocol::{decode, encode, Control, WireEnvelope};
use arco_core::state::Snapshot;
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, Notify};

use crate::outbox::{Outbox, Overflow, DEFAULT_QUEUE_CAP};
use crate::room::{valid_peer_id, RelayError, Room, Routed, RELAY_PEER};
use crate::session::{open_session, resolve_base, valid_room_id, SessionStore, StorageConfig};

#[derive(Clone, Debug)]
pub struct RelayConfig {
    pub storage: StorageConfig,
    /// Minimum spacing between sends to a peer while only lossy messages are
    /// queued. Reliable messages go out immediately.
    pub flush_window_ms: u64,
    pub queue_cap: usize,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            storage: StorageConfig::default(),
            flush_window_ms: arco_core::protocol::DEFAULT_FLUSH_WINDOW_MS,
            queue_cap: DEFAULT_QUEUE_CAP,
        }
    }
}

pub fn now_ms() -> TimestampMs {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Connection-side handle of a joined peer.
pub struct PeerLink {
    room: RoomId,
    peer: PeerId,
    outbox: Mutex<Outbox>,
    notify: Notify,
    closed: Mutex<Option<String>>,
}

impl PeerLink {
    fn new(room: RoomId, peer: PeerId, cap: usize) -> Self {
        Self {
            room,
            peer,
            outbox: Mutex::new(Outbox::new(cap)),
            notify: Notify::new(),
            closed: Mutex::new(None),
        }
    }

    pub fn peer(&self) -> &PeerId {
        &self.peer
    }

    fn push(&self, env: Arc<WireEnvelope>) -> Result<(), Overflow> {
        let r = self.outbox.lock().expect("outbox lock").push(env);
        self.notify.notify_one();
        r
    }

    fn close(&self, reason: String) {
        self.closed.lock().expect("close lock").get_or_insert(reason);
        self.notify.notify_one();
    }

    fn closed_reason(&self) -> Option<String> {
        self.closed.lock().expect("close lock").clone()
    }

    fn push_error(&self, message: String) {
        let env = WireEnvelope::new(self.room.clone(), PeerId::new(RELAY_PEER), 0, now_ms(), arco_core::protocol::Message::Control {
            control: Control::Error { message },
        });
        if self.push(Arc::new(env)).is_err() {
            self.close("outbound queue overflow".into());
        }
    }
}

enum RoomCmd {
    Join {
        peer: PeerId,
        role: PeerRole,
        reply: oneshot::Sender<Result<Arc<PeerLink>, RelayError>>,
    },
    Inbound {
        link: Arc<PeerLink>,
        envelope: WireEnvelope,
    },
    Disconnect {
        link: Arc<PeerLink>,
    },
    Snapshot {
        reply: oneshot::Sender<(Snapshot, Digest)>,
    },
    Shutdown {
        reply: oneshot::Sender<()>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomInfo {
    pub room: RoomId,
    pub session_id: SessionId,
    pub peers: Vec<PeerId>,
    pub last_seq: u64,
}

struct RoomHandle {
    tx: mpsc::UnboundedSender<RoomCmd>,
    generation: u64,
    info: Arc<Mutex<RoomInfo>>,
}

struct Registry {
    config: RelayConfig,
    rooms: Mutex<HashMap<RoomId, RoomHandle>>,
    generation: AtomicU64,
    rng: Mutex<StdRng>,
}

#[derive(Debug, thiserror::Error)]
pub enum JoinError {
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error("invalid room id {0:?}")]
    InvalidRoom(String),
    #[error("cannot open session: {0}")]
    Storage(#[from] arco_core::persistence::PersistError),
}

/// Shared relay: a registry of live rooms, each driven by its own task.
#[derive(Clone)]
pub struct Relay {
    inner: Arc<Registry>,
}

impl Relay {
    pub fn new(config: RelayConfig) -> Self {
        Self {
            inner: Arc::new(Registry {
                config,
                rooms: Mutex::new(HashMap::new()),
                generation: AtomicU64::new(0),
                rng: Mutex::new(StdRng::from_os_rng()),
            }),
        }
    }

    pub fn config(&self) -> &RelayConfig {
        &self.inner.config
    }

    fn room_tx(&self, room: &RoomId) -> Result<mpsc::UnboundedSender<RoomCmd>, JoinError> {
        let mut rooms = self.inner.rooms.lock().expect("registry lock");
        if let Some(h) = rooms.get(room) {
            return Ok(h.tx.clone());
        }
        let base = resolve_base(&self.inner.config.storage, room)?;
        let now = now_ms();
        let session = {
            let mut rng = self.inner.rng.lock().expect("rng lock");
            loop {
                let s = SessionId::generate(now, &mut *rng);
                let taken = self
                    .inner
                    .config
                    .storage
                    .persist_dir
                    .as_ref()
                    .is_some_and(|d| d.join(room.as_str()).join(s.as_str()).exists());
                if !taken {
                    break s;
                }
            }
        };
        let store = open_session(&self.inner.config.storage, room, &session, &base)?;
        let (tx, rx) = mpsc::unbounded_channel();
        let generation = self.inner.generation.fetch_add(1, Ordering::Relaxed);
        let info = Arc::new(Mutex::new(RoomInfo {
            room: room.clone(),
            session_id: session.clone(),
            peers: vec![],
            last_seq: 0,
        }));
        tracing::info!(room = %room, session = %session, "room opened");
        let task = RoomTask {
            relay: self.clone(),
            generation,
            room: Room::new(room.clone(), session, base),
            store,
            links: HashMap::new(),
            info: info.clone(),
        };
        tokio::spawn(task.run(rx));
        rooms.insert(room.clone(), RoomHandle {
            tx: tx.clone(),
            generation,
            info,
        });
        Ok(tx)
    }

    /// Joins (creating the room if needed). Retries while a closing room
    /// hands over to its successor.
    pub async fn join(&self, room: &RoomId, peer: PeerId, role: PeerRole) -> Result<Arc<PeerLink>, JoinError> {
        if !valid_room_id(room.as_str()) {
            return Err(JoinError::InvalidRoom(room.as_str().to_owned()));
        }
        if !valid_peer_id(peer.as_str()) {
            return Err(RelayError::InvalidPeerId(peer.as_str().to_owned()).into());
        }
        for _ in 0..200 {
            let tx = self.room_tx(room)?;
            let (reply, rx) = oneshot::channel();
            if tx
                .send(RoomCmd::Join {
                    peer: peer.clone(),
                    role,
                    reply,
                })
                .is_ok()
            {
                match rx.await {
                    Ok(Err(RelayError::RoomClosed)) | Err(_) => {}
                    Ok(r) => return Ok(r?),
                }
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        Err(RelayError::RoomClosed.into())
    }

    pub async fn snapshot(&self, room: &RoomId) -> Option<(Snapshot, Digest)> {
        let tx = self.inner.rooms.lock().expect("registry lock").get(room)?.tx.clone();
        let (reply, rx) = oneshot::channel();
        tx.send(RoomCmd::Snapshot { reply }).ok()?;
        rx.await.ok()
    }

    pub fn rooms(&self) -> Vec<RoomInfo> {
        let rooms = self.inner.rooms.lock().expect("registry lock");
        let mut out: Vec<RoomInfo> = rooms.values().map(|h| h.info.lock().expect("info lock").clone()).collect();
        out.sort_by(|a, b| a.room.cmp(&b.room));
        out
    }

    /// Closes every room, persisting its session.
    pub async fn shutdown(&self) {
        let txs: Vec<_> = self
            .inner
            .rooms
            .lock()
            .expect("registry lock")
            .values()
            .map(|h| h.tx.clone())
            .collect();
        for tx in txs {
            let (reply, rx) = oneshot::channel();
            if tx.send(RoomCmd::Shutdown { reply }).is_ok() {
                let _ = rx.await;
            }
        }
    }

    fn unregister(&self, room: &RoomId, generation: u64) {
        let mut rooms = self.inner.rooms.lock().expect("registry lock");
        if rooms.get(room).is_some_and(|h| h.generation == generation) {
            rooms.remove(room);
        }
    }
}

struct RoomTask {
    relay: Relay,
    generation: u64,
    room: Room,
    store: Option<SessionStore>,
    links: HashMap<PeerId, Arc<PeerLink>>,
    info: Arc<Mutex<RoomInfo>>,
}

impl RoomTask {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<RoomCmd>) {
        while let Some(cmd) = rx.recv().await {
            match cmd {
                RoomCmd::Join { peer, role, reply } => match self.room.join(peer.clone(), role, now_ms()) {
                    Ok(routed) => {
                        let link = Arc::new(PeerLink::new(
                            self.room.id().clone(),
                            peer.clone(),
                            self.relay.inner.config.queue_cap,
                        ));
                        self.links.insert(peer, link.clone());
                        self.deliver(routed);
                        let _ = reply.send(Ok(link));
                    }
                    Err(e) => {
                        let _ = reply.send(Err(e));
                    }
                },
                RoomCmd::Inbound { link, envelope } => {
                    if !self.is_current(&link) {
                        continue;
                    }
                    if envelope.sender != link.peer {
                        link.push_error(format!("sender {} does not match connection peer {}", envelope.sender, link.peer));
                        continue;
                    }
                    match self.room.route(envelope, now_ms()) {
                        Ok(routed) => self.deliver(routed),
                        Err(e) => link.push_error(e.to_string()),
                    }
                }
                RoomCmd::Disconnect { link } => {
                    if self.is_current(&link) {
                        self.drop_peer(&link.peer.clone());
                    }
                }
                RoomCmd::Snapshot { reply } => {
                    let _ = reply.send((self.room.snapshot(), self.room.room_hash()));
                }
                RoomCmd::Shutdown { reply } => {
                    for link in self.links.values() {
                        link.close("relay shutting down".into());
                    }
                    self.close(&mut rx).await;
                    let _ = reply.send(());
                    return;
                }
            }
            self.refresh_info();
            if self.room.peer_count() == 0 {
                self.close(&mut rx).await;
                return;
            }
        }
    }

    fn is_current(&self, link: &Arc<PeerLink>) -> bool {
        self.links.get(&link.peer).is_some_and(|l| Arc::ptr_eq(l, link))
    }

    fn refresh_info(&self) {
        let mut info = self.info.lock().expect("info lock");
        info.peers = self.room.peer_ids().cloned().collect();
        info.last_seq = self.room.last_seq();
    }

    fn drop_peer(&mut self, peer: &PeerId) {
        self.links.remove(peer);
        if let Ok(routed) = self.room.leave(peer, now_ms()) {
            self.deliver(routed);
        }
    }

    fn deliver(&mut self, routed: Routed) {
        let mut pending = vec![routed];
        while let Some(routed) = pending.pop() {
            if let Some(record) = &routed.record {
                if let Some(store) = &mut self.store {
                    if let Err(e) = store.append(record) {
                        tracing::error!(room = %self.room.id(), "session log append failed: {e}");
                    }
                }
            }
            if let Some(e) = &routed.fold_error {
                tracing::debug!(room = %self.room.id(), "sequenced payload rejected: {e}");
            }
            let mut kicked = Vec::new();
            for out in routed.outbound {
                if let Some(link) = self.links.get(&out.to) {
                    if link.push(out.envelope).is_err() {
                        tracing::warn!(room = %self.room.id(), peer = %out.to, "outbound queue overflow; disconnecting");
                        link.close("outbound queue overflow".into());
                        kicked.push(out.to);
                    }
                }
            }
            for peer in kicked {
                if self.links.remove(&peer).is_some() {
                    if let Ok(r) = self.room.leave(&peer, now_ms()) {
                        pending.push(r);
                    }
                }
            }
        }
    }

    async fn close(&mut self, rx: &mut mpsc::UnboundedReceiver<RoomCmd>) {
        rx.close();
        if let Some(store) = self.store.take() {
            let r = store.close(
                self.room.id(),
                self.room.session_id(),
                self.room.state(),
                self.room.last_seq(),
                now_ms(),
            );
            match r {
                Ok(dir) => tracing::info!(room = %self.room.id(), dir = %dir.display(), "session saved"),
                Err(e) => tracing::error!(room = %self.room.id(), "saving session failed: {e}"),
            }
        }
        self.relay.unregister(self.room.id(), self.generation);
        while let Ok(cmd) = rx.try_recv() {
            match cmd {
                RoomCmd::Join { reply, .. } => {
                    let _ = reply.send(Err(RelayError::RoomClosed));
                }
                RoomCmd::Snapshot { reply } => {
                    let _ = reply.send((self.room.snapshot(), self.room.room_hash()));
                }
                RoomCmd::Shutdown { reply } => {
                    let _ = reply.send(());
                }
                RoomCmd::Inbound { .. } | RoomCmd::Disconnect { .. } => {}
            }
        }
    }
}

#[derive(Deserialize)]
struct JoinParams {
    peer: String,
    role: String,
}

/// Body of `GET /rooms/{id}/snapshot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotResponse {
    pub snapshot: Snapshot,
    pub room_hash: Digest,
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], canonical::to_string(value)).into_response()
}

pub fn router(relay: Relay) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/rooms", get(list_rooms))
        .route("/rooms/{id}/snapshot", get(get_snapshot))
        .route("/ws/{room}", get(ws_handler))
        .with_state(relay)
}

async fn list_rooms(State(relay): State<Relay>) -> Response {
    json_response(StatusCode::OK, &relay.rooms())
}

async fn get_snapshot(State(relay): State<Relay>, Path(id): Path<String>) -> Response {
    match relay.snapshot(&RoomId::new(id)).await {
        Some((snapshot, room_hash)) => json_response(StatusCode::OK, &SnapshotResponse { snapshot, room_hash }),
        None => (StatusCode::NOT_FOUND, "no such room").into_response(),
    }
}

async fn ws_handler(
    State(relay): State<Relay>,
    Path(room): Path<String>,
    Query(params): Query<JoinParams>,
    ws: WebSocketUpgrade,
) -> Response {
    let role: PeerRole = match params.role.parse() {
        Ok(r) => r,
        Err(_) => return (StatusCode::BAD_REQUEST, "role must be insitu or exsitu").into_response(),
    };
    let room = RoomId::new(room);
    let link = match relay.join(&room, PeerId::new(params.peer), role).await {
        Ok(l) => l,
        Err(e @ JoinError::Relay(RelayError::DuplicatePeer(_))) => {
            return (StatusCode::CONFLICT, e.to_string()).into_response()
        }
        Err(e @ JoinError::Storage(_)) => return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    let window = relay.config().flush_window_ms;
    let tx = relay.inner.rooms.lock().expect("registry lock").get(&room).map(|h| h.tx.clone());
    let Some(tx) = tx else {
        return (StatusCode::SERVICE_UNAVAILABLE, "room closed").into_response();
    };
    let on_fail_tx = tx.clone();
    let on_fail_link = link.clone();
    ws.on_failed_upgrade(move |_| {
        let _ = on_fail_tx.send(RoomCmd::Disconnect { link: on_fail_link });
    })
    .on_upgrade(move |socket| run_peer(socket, link, tx, window))
}

async fn run_peer(socket: WebSocket, link: Arc<PeerLink>, tx: mpsc::UnboundedSender<RoomCmd>, window_ms: u64) {
    let (mut sink, mut stream) = socket.split();
    let window = Duration::from_millis(window_ms);
    let writer_link = link.clone();
    let writer = async move {
        let mut last_flush: Option<tokio::time::Instant> = None;
        loop {
            writer_link.notify.notified().await;
            let lossy_only = !writer_link.outbox.lock().expect("outbox lock").has_reliable();
            if let (true, Some(t)) = (lossy_only && !window.is_zero(), last_flush) {
                tokio::time::sleep_until(t + window).await;
            }
            let batch = writer_link.outbox.lock().expect("outbox lock").drain();
            for env in batch {
                let text = String::from_utf8(encode(&env)).expect("canonical JSON is UTF-8");
                if sink.send(WsMessage::Text(text.into())).await.is_err() {
                    return;
                }
            }
            last_flush = Some(tokio::time::Instant::now());
            if let Some(reason) = writer_link.closed_reason() {
                let _ = sink
                    .send(WsMessage::Close(Some(axum::extract::ws::CloseFrame {
                        code: 1011,
                        reason: reason.into(),
                    })))
                    .await;
                return;
            }
        }
    };
    let reader_link = link.clone();
    let reader_tx = tx.clone();
    let reader = async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                WsMessage::Text(t) => match decode(t.as_bytes()) {
                    Ok(envelope) => {
                        let cmd = RoomCmd::Inbound {
                            link: reader_link.clone(),
                            envelope,
                        };
                        if reader_tx.send(cmd).is_err() {
                            return;
                        }
                    }
                    Err(e) => reader_link.push_error(e.to_string()),
                },
                WsMessage::Binary(_) => reader_link.push_error("binary frames are not supported".into()),
                WsMessage::Close(_) => return,
                _ => {}
            }
        }
    };
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    let _ = tx.send(RoomCmd::Disconnect { link });
}

/// Serves until `shutdown` resolves, then persists every open room.
pub async fn serve(
    listener: tokio::net::TcpListener,
    relay: Relay,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(relay.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    relay.shutdown().await;
    Ok(())
}
