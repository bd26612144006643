//! Sans-I/O simulated peers. The harness (virtual or live) feeds them time,
//! scripted actions and inbound envelopes, and ships what they flush.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use arco_core::annotation::{place_marker, project_cursor, AnnotationKind, Cursor, LabelPalette, Stroke};
use arco_core::canonical::Digest;
use arco_core::capture::{snapshot, CaptureMeta, ColorFrame, DepthFrame, MeshCaptureTimer, SnapshotOptions};
use arco_core::geometry::{CameraView, Pose, TriangleMesh};
use arco_core::ids::{AnnotationId, CaptureId, MarkerId, PeerId, PeerRole, RoomId, ScreenshotId, SessionId, TimestampMs};
use arco_core::localization::LocalizationState;
use arco_core::protocol::{Control, FlushPolicy, Message, Screenshot, SendQueue, WireEnvelope};
use arco_core::scene::diff;
use arco_core::state::Replica;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frames::color_to_ppm;
use crate::mutate::mutate;
use crate::trace::{Action, LoadedTrace};
use crate::SimError;

/// Counters a client keeps about itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    /// Messages handed to the send queue, by kind (before coalescing).
    pub emitted: BTreeMap<String, usize>,
    /// Messages actually flushed onto the wire, by kind.
    pub sent: BTreeMap<String, usize>,
    /// Actions refused locally because the device was not localized.
    pub gated: usize,
    /// Mesh blocks offered while no mesh capture was running.
    pub idle_blocks: usize,
    /// Actions that could not run (bad phase, no depth, nothing to anchor to).
    pub skipped: usize,
    /// Error notices received from the relay.
    pub relay_errors: usize,
    pub received: usize,
}

/// Connection-level request from a scripted action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkOp {
    Disconnect,
    Reconnect,
}

/// State shared by every simulated peer: sequencing, batching and the
/// replica of the room built from the snapshot and the sequenced stream.
#[derive(Clone, Debug)]
pub struct ClientCore {
    pub room: RoomId,
    pub peer: PeerId,
    pub role: PeerRole,
    client_seq: u64,
    queue: SendQueue,
    replica: Option<Replica>,
    /// Reliable messages flushed but not yet echoed (or refused).
    outstanding: usize,
    pub stats: ClientStats,
}

impl ClientCore {
    pub fn new(room: RoomId, peer: PeerId, role: PeerRole, policy: FlushPolicy) -> Self {
        Self {
            room,
            peer,
            role,
            client_seq: 0,
            queue: SendQueue::new(policy),
            replica: None,
            outstanding: 0,
            stats: ClientStats::default(),
        }
    }

    pub fn replica(&self) -> Option<&Replica> {
        self.replica.as_ref()
    }

    pub fn session_id(&self) -> Option<&SessionId> {
        self.replica.as_ref().map(|r| &r.session_id)
    }

    pub fn hash(&self) -> Option<Digest> {
        self.replica.as_ref().map(Replica::hash)
    }

    pub fn is_joined(&self) -> bool {
        self.replica.is_some()
    }

    /// Nothing queued and every flushed reliable message acknowledged.
    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.outstanding == 0
    }

    pub fn emit(&mut self, body: Message, now: TimestampMs) {
        self.client_seq += 1;
        *self.stats.emitted.entry(body.kind().to_owned()).or_default() += 1;
        let env = WireEnvelope::new(self.room.clone(), self.peer.clone(), self.client_seq, now, body);
        self.queue.push(env, now);
    }

    pub fn next_deadline(&self) -> Option<TimestampMs> {
        self.queue.next_deadline()
    }

    fn account(&mut self, out: Vec<WireEnvelope>) -> Vec<WireEnvelope> {
        for e in &out {
            *self.stats.sent.entry(e.body.kind().to_owned()).or_default() += 1;
            if e.is_reliable() {
                self.outstanding += 1;
            }
        }
        out
    }

    /// Messages due at `now` under the flush policy.
    pub fn poll_flush(&mut self, now: TimestampMs) -> Vec<WireEnvelope> {
        let out = self.queue.flush_policy(now);
        self.account(out)
    }

    pub fn flush_all(&mut self) -> Vec<WireEnvelope> {
        let out = self.queue.flush_now();
        self.account(out)
    }

    /// Forgets the connection. Unflushed messages are discarded.
    pub fn disconnected(&mut self) {
        self.queue.flush_now();
        self.replica = None;
        self.outstanding = 0;
    }

    /// Returns the envelope back if it is a lossy message from another peer,
    /// for role-specific handling.
    pub fn receive(&mut self, env: &WireEnvelope) -> Result<(), SimError> {
        self.stats.received += 1;
        match &env.body {
            Message::Control {
                control: Control::Snapshot { snapshot },
            } => {
                if env.server_seq.is_none() {
                    self.replica = Some(Replica::from_snapshot(snapshot));
                }
                return Ok(());
            }
            Message::Control {
                control: Control::Error { message },
            } => {
                tracing::debug!(peer = %self.peer, "relay refused a message: {message}");
                self.stats.relay_errors += 1;
                self.outstanding = self.outstanding.saturating_sub(1);
                return Ok(());
            }
            _ => {}
        }
        if env.server_seq.is_none() {
            return Ok(());
        }
        let replica = self
            .replica
            .as_mut()
            .ok_or_else(|| SimError::Protocol("sequenced message before snapshot".into()))?;
        let applied = replica.apply(env).map_err(|e| SimError::Protocol(e.to_string()))?;
        if applied && env.sender == self.peer && !matches!(env.body, Message::Control { .. }) {
            self.outstanding = self.outstanding.saturating_sub(1);
        }
        Ok(())
    }

    /// Meshes a cursor can land on: the site mesh plus every coarse-mesh block.
    fn raycast_targets(&self, site: Option<&TriangleMesh>) -> Vec<TriangleMesh> {
        let mut out: Vec<TriangleMesh> = site.cloned().into_iter().collect();
        if let Some(r) = &self.replica {
            for m in r.state.meshes.values() {
                out.extend(m.blocks.blocks.values().cloned());
            }
        }
        out
    }
}

/// In-situ device replaying a capture trace.
pub struct InSituClient {
    pub core: ClientCore,
    trace: Arc<LoadedTrace>,
    localization: LocalizationState,
    pose: Pose,
    timer: MeshCaptureTimer,
    capture: Option<(CaptureId, TimestampMs)>,
    frame: Option<(DepthFrame, ColorFrame)>,
    stroke: Option<Stroke>,
    palette: LabelPalette,
    cursor: Option<Cursor>,
    rng: ChaCha8Rng,
    /// Actions that arrived before the room snapshot.
    pending: VecDeque<Action>,
}

fn anchored(loc: &LocalizationState, pose: &Pose) -> Option<Pose> {
    loc.alignment().ok().map(|a| a.compose(pose))
}

impl InSituClient {
    pub fn new(room: RoomId, trace: Arc<LoadedTrace>, policy: FlushPolicy, seed: u64) -> Self {
        let peer = trace.trace.header.peer.clone();
        Self {
            core: ClientCore::new(room, peer, PeerRole::InSitu, policy),
            trace,
            localization: LocalizationState::new(),
            pose: Pose::IDENTITY,
            timer: MeshCaptureTimer::default(),
            capture: None,
            frame: None,
            stroke: None,
            palette: LabelPalette::new(),
            cursor: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: VecDeque::new(),
        }
    }

    pub fn localization(&self) -> &LocalizationState {
        &self.localization
    }

    /// When the running mesh capture hits its budget.
    pub fn timer_deadline(&self) -> Option<TimestampMs> {
        match (self.timer.is_capturing(), self.capture) {
            (true, Some((_, started))) => Some(started + (self.timer.budget * 1000.0).round() as u64),
            _ => None,
        }
    }

    /// Advances the mesh-capture timer, closing the capture when its budget
    /// is spent.
    pub fn tick(&mut self, now: TimestampMs) {
        let Some((id, started)) = self.capture else { return };
        let (timer, stopped) = self.timer.tick((now.saturating_sub(started)) as f64 / 1000.0);
        self.timer = timer;
        if stopped.is_some() {
            self.capture = None;
            if self.localization.is_localized() && self.core.is_joined() {
                self.core.emit(Message::CaptureStopped { capture_id: id }, now);
            }
        }
    }

    pub fn on_snapshot(&mut self, now: TimestampMs) -> Result<(), SimError> {
        while let Some(a) = self.pending.pop_front() {
            self.run(&a, now)?;
        }
        Ok(())
    }

    pub fn act(&mut self, action: &Action, now: TimestampMs) -> Result<Option<LinkOp>, SimError> {
        match action {
            Action::Disconnect => {
                self.pending.clear();
                return Ok(Some(LinkOp::Disconnect));
            }
            Action::Reconnect => return Ok(Some(LinkOp::Reconnect)),
            _ => {}
        }
        if !self.core.is_joined() {
            self.pending.push_back(action.clone());
            return Ok(None);
        }
        self.run(action, now)?;
        Ok(None)
    }

    fn session(&self) -> SessionId {
        self.core.session_id().cloned().expect("joined")
    }

    fn phase_event(&mut self, now: TimestampMs) {
        self.core.emit(
            Message::LocalizationEvent {
                peer: self.core.peer.clone(),
                phase: self.localization.phase,
            },
            now,
        );
    }

    fn gated(&mut self) -> bool {
        if self.localization.is_localized() {
            false
        } else {
            self.core.stats.gated += 1;
            true
        }
    }

    fn run(&mut self, action: &Action, now: TimestampMs) -> Result<(), SimError> {
        self.tick(now);
        let trace = Arc::clone(&self.trace);
        let header = &trace.trace.header;
        let intrinsics = header.intrinsics;
        match action {
            Action::OfferCandidate { index } => {
                let c = header.candidates[*index];
                match self.localization.offer_candidate(c) {
                    Ok(l) => {
                        self.localization = l;
                        self.phase_event(now);
                    }
                    Err(_) => self.core.stats.skipped += 1,
                }
            }
            Action::Confirm { alignment } => {
                let mut loc = self.localization;
                if let Some(a) = alignment {
                    if matches!(loc.phase, arco_core::localization::LocalizationPhase::Unlocalized) {
                        loc = loc.restart();
                    }
                    loc = loc.offer_candidate(*a).map_err(|e| SimError::TraceInvalid(e.to_string()))?;
                }
                match loc.confirm(now) {
                    Ok(l) => {
                        self.localization = l;
                        self.phase_event(now);
                    }
                    Err(_) => self.core.stats.skipped += 1,
                }
            }
            Action::Restart => {
                self.localization = self.localization.restart();
                self.stroke = None;
                self.phase_event(now);
            }
            Action::Move { pose } => {
                self.pose = *pose;
                let shown = anchored(&self.localization, pose).unwrap_or(*pose);
                self.core.emit(
                    Message::PresencePose {
                        peer: self.core.peer.clone(),
                        pose: shown,
                        opacity: 1.0,
                    },
                    now,
                );
            }
            Action::Frame { depth, color } => {
                let d = trace.depth(depth)?.to_frame(intrinsics, self.pose, now);
                let c = trace.color(color)?.clone();
                let camera = CameraView {
                    pose: anchored(&self.localization, &self.pose).unwrap_or(self.pose),
                    intrinsics,
                };
                self.core.emit(
                    Message::ViewFrame {
                        peer: self.core.peer.clone(),
                        frame: color_to_ppm(&c),
                        camera,
                    },
                    now,
                );
                self.frame = Some((d, c));
            }
            Action::Snapshot { depth, color } => {
                let d = trace.depth(depth)?.to_frame(intrinsics, self.pose, now);
                let c = trace.color(color)?.clone();
                if !self.gated() {
                    let opts = SnapshotOptions {
                        stride: header.stride,
                        ..Default::default()
                    };
                    let meta = CaptureMeta {
                        capture_id: CaptureId::random(&mut self.rng),
                        session_id: self.session(),
                        created_at: now,
                    };
                    let cloud = snapshot(&d, &c, &self.localization, &opts, meta)
                        .map_err(|e| SimError::TraceInvalid(e.to_string()))?;
                    self.core.emit(Message::CaptureCloud { cloud }, now);
                }
                self.frame = Some((d, c));
            }
            Action::StartMeshCapture => {
                if !self.gated() {
                    if let Some((id, _)) = self.capture.take() {
                        self.core.emit(Message::CaptureStopped { capture_id: id }, now);
                    }
                    self.timer = self.timer.start(0.0);
                    self.capture = Some((CaptureId::random(&mut self.rng), now));
                }
            }
            Action::MeshBlock { key, mesh } => {
                let mesh = trace.mesh(mesh)?.clone();
                let block_size = header.block_size;
                match self.capture {
                    _ if !self.localization.is_localized() => self.core.stats.gated += 1,
                    Some((capture_id, _)) if self.timer.is_capturing() => self.core.emit(
                        Message::MeshBlockUpdate {
                            capture_id,
                            key: *key,
                            block_size,
                            mesh,
                        },
                        now,
                    ),
                    _ => self.core.stats.idle_blocks += 1,
                }
            }
            Action::SurfacePoint { pixel } => {
                if self.gated() {
                    return Ok(());
                }
                let Some((depth, _)) = &self.frame else {
                    self.core.stats.skipped += 1;
                    return Ok(());
                };
                let stroke = match self.stroke.take() {
                    Some(s) if s.kind == AnnotationKind::Surface => s,
                    _ => Stroke::new(AnnotationKind::Surface),
                };
                let mut stroke = stroke;
                if stroke.surface_append(*pixel, depth, &self.localization).is_err() {
                    self.core.stats.skipped += 1;
                }
                self.stroke = Some(stroke);
            }
            Action::AirPoint => {
                if self.gated() {
                    return Ok(());
                }
                let mut stroke = match self.stroke.take() {
                    Some(s) if s.kind == AnnotationKind::Air => s,
                    _ => Stroke::new(AnnotationKind::Air),
                };
                if stroke.air_append(&self.pose, &self.localization).is_err() {
                    self.core.stats.skipped += 1;
                }
                self.stroke = Some(stroke);
            }
            Action::Label { text } => {
                let Some(stroke) = self.stroke.take() else {
                    self.core.stats.skipped += 1;
                    return Ok(());
                };
                if self.gated() {
                    return Ok(());
                }
                let id = AnnotationId::random(&mut self.rng);
                let label = text.clone().filter(|t| !t.is_empty());
                match stroke.finish(id, self.session(), self.core.peer.clone(), label, &mut self.palette, now) {
                    Ok(annotation) => self.core.emit(Message::AnnotationAdd { annotation }, now),
                    Err(_) => self.core.stats.skipped += 1,
                }
            }
            Action::CursorAt { pixel } => {
                if self.gated() {
                    return Ok(());
                }
                let camera = CameraView {
                    pose: anchored(&self.localization, &self.pose).expect("localized"),
                    intrinsics,
                };
                let site = header.location_mesh.as_ref().map(|m| trace.mesh(m)).transpose()?;
                let targets = self.core.raycast_targets(site);
                let cursor = project_cursor(self.core.peer.clone(), PeerRole::InSitu, *pixel, &camera, &targets);
                self.core.emit(Message::CursorLive { cursor: cursor.clone() }, now);
                self.cursor = Some(cursor);
            }
            Action::Marker => {
                if self.gated() {
                    return Ok(());
                }
                let Some(cursor) = &self.cursor else {
                    self.core.stats.skipped += 1;
                    return Ok(());
                };
                let marker = place_marker(cursor, MarkerId::random(&mut self.rng), self.session(), now);
                self.core.emit(Message::CursorMarker { marker }, now);
            }
            Action::Disconnect | Action::Reconnect => unreachable!("handled by act"),
        }
        Ok(())
    }
}

/// Scripted ex-situ editor actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExAction {
    /// One random scene edit, sent as the diff against the replica.
    Edit,
    /// Hover over the live-view panel.
    Hover { pixel: [f64; 2] },
    Marker,
    Screenshot,
    Opacity { value: f64 },
}

#[derive(Clone)]
struct LiveView {
    peer: PeerId,
    frame: Vec<u8>,
    camera: CameraView,
}

/// Desktop editor peer.
pub struct ExSituClient {
    pub core: ClientCore,
    rng: ChaCha8Rng,
    view: Option<LiveView>,
    cursor: Option<Cursor>,
    site: Option<TriangleMesh>,
}

impl ExSituClient {
    pub fn new(room: RoomId, peer: PeerId, policy: FlushPolicy, seed: u64, site: Option<TriangleMesh>) -> Self {
        Self {
            core: ClientCore::new(room, peer, PeerRole::ExSitu, policy),
            rng: ChaCha8Rng::seed_from_u64(seed),
            view: None,
            cursor: None,
            site,
        }
    }

    pub fn receive(&mut self, env: &WireEnvelope) -> Result<(), SimError> {
        if let Message::ViewFrame { peer, frame, camera } = &env.body {
            self.view = Some(LiveView {
                peer: peer.clone(),
                frame: frame.clone(),
                camera: *camera,
            });
        }
        self.core.receive(env)
    }

    pub fn act(&mut self, action: &ExAction, now: TimestampMs) {
        let Some(session) = self.core.session_id().cloned() else {
            self.core.stats.skipped += 1;
            return;
        };
        match action {
            ExAction::Edit => {
                let scene = &self.core.replica().expect("joined").state.scene;
                let mut next = scene.clone();
                mutate(&mut next, &mut self.rng);
                let deltas = diff(scene, &next);
                if deltas.is_empty() {
                    self.core.stats.skipped += 1;
                } else {
                    self.core.emit(Message::SceneDeltas { deltas }, now);
                }
            }
            ExAction::Hover { pixel } => {
                let Some(view) = &self.view else {
                    self.core.stats.skipped += 1;
                    return;
                };
                let camera = view.camera;
                let targets = self.core.raycast_targets(self.site.as_ref());
                let cursor = project_cursor(self.core.peer.clone(), PeerRole::ExSitu, *pixel, &camera, &targets);
                self.core.emit(Message::CursorLive { cursor: cursor.clone() }, now);
                self.cursor = Some(cursor);
            }
            ExAction::Marker => {
                let Some(cursor) = &self.cursor else {
                    self.core.stats.skipped += 1;
                    return;
                };
                let marker = place_marker(cursor, MarkerId::random(&mut self.rng), session, now);
                self.core.emit(Message::CursorMarker { marker }, now);
            }
            ExAction::Screenshot => {
                let Some(view) = self.view.clone() else {
                    self.core.stats.skipped += 1;
                    return;
                };
                let screenshot = Screenshot {
                    id: ScreenshotId::random(&mut self.rng),
                    session_id: session,
                    peer: view.peer,
                    taken_by: self.core.peer.clone(),
                    image: view.frame,
                    pose: view.camera.pose,
                    taken_at: now,
                };
                self.core.emit(Message::ScreenshotAnchor { screenshot }, now);
            }
            ExAction::Opacity { value } => {
                self.core.emit(
                    Message::PresencePose {
                        peer: self.core.peer.clone(),
                        pose: Pose::IDENTITY,
                        opacity: value.clamp(0.0, 1.0),
                    },
                    now,
                );
            }
        }
    }
}
