//! Materialized room state: the deterministic fold of sequenced reliable
//! messages over a base scene, and the snapshots handed to late joiners.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{Annotation, AnnotationError, Marker};
use crate::canonical::Digest;
use crate::capture::{CaptureError, MeshBlockSet, PointCloud};
use crate::ids::{AnnotationId, CaptureId, MarkerId, PeerId, PeerRole, RoomId, ScreenshotId, SessionId, TimestampMs};
use crate::localization::LocalizationPhase;
use crate::protocol::{Message, Screenshot, WireEnvelope};
use crate::scene::{self, RejectedDelta, SceneState};

/// A coarse-mesh capture and whether it has been closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshCapture {
    pub blocks: MeshBlockSet,
    pub stopped: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoomState {
    pub scene: SceneState,
    /// Path of the location mesh the room is anchored to, if any.
    pub location_mesh: Option<String>,
    pub clouds: BTreeMap<CaptureId, PointCloud>,
    pub meshes: BTreeMap<CaptureId, MeshCapture>,
    pub annotations: BTreeMap<AnnotationId, Annotation>,
    pub markers: BTreeMap<MarkerId, Marker>,
    pub screenshots: BTreeMap<ScreenshotId, Screenshot>,
    pub localization: BTreeMap<PeerId, LocalizationPhase>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoldError {
    #[error("{} scene delta(s) rejected", .0.len())]
    Scene(Vec<RejectedDelta>),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("duplicate {0} id")]
    Duplicate(&'static str),
    #[error("capture {0} is already closed")]
    CaptureClosed(CaptureId),
    #[error("unknown capture {0}")]
    UnknownCapture(CaptureId),
    #[error("session id {0:?} is not path-safe")]
    InvalidSessionId(String),
    #[error("block size {got} differs from capture grid {expected}")]
    BlockSizeMismatch { expected: f64, got: f64 },
}

/// Why the relay refuses to sequence a message from a peer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GateError {
    #[error("{kind} requires a localized in-situ device")]
    NotLocalized { kind: &'static str },
    #[error("{kind} can only come from an in-situ peer")]
    InSituOnly { kind: &'static str },
    #[error("peers may only report their own {kind}")]
    Impersonation { kind: &'static str },
}

impl RoomState {
    pub fn with_base(scene: SceneState, location_mesh: Option<String>) -> Self {
        Self {
            scene,
            location_mesh,
            ..Default::default()
        }
    }

    /// Digest of the canonical serialization.
    pub fn hash(&self) -> Digest {
        Digest::of(self)
    }

    pub fn is_localized(&self, peer: &PeerId) -> bool {
        matches!(self.localization.get(peer), Some(LocalizationPhase::Localized { .. }))
    }

    /// Localization gate: spatial content from an in-situ peer needs a
    /// confirmed alignment. Ex-situ peers may only place cursors.
    pub fn admits(&self, sender: &PeerId, role: PeerRole, body: &Message) -> Result<(), GateError> {
        let kind = body.kind();
        match body {
            Message::LocalizationEvent { peer, .. } => {
                if role != PeerRole::InSitu {
                    return Err(GateError::InSituOnly { kind });
                }
                if peer != sender {
                    return Err(GateError::Impersonation { kind });
                }
                return Ok(());
            }
            Message::CursorLive { cursor } | Message::CursorMarker { marker: crate::annotation::Marker { cursor, .. } } => {
                if &cursor.peer != sender || cursor.role != role {
                    return Err(GateError::Impersonation { kind });
                }
            }
            Message::PresencePose { peer, .. } | Message::ViewFrame { peer, .. } => {
                if peer != sender {
                    return Err(GateError::Impersonation { kind });
                }
            }
            _ => {}
        }
        if !body.requires_localization() {
            return Ok(());
        }
        match role {
            PeerRole::InSitu if self.is_localized(sender) => Ok(()),
            PeerRole::InSitu => Err(GateError::NotLocalized { kind }),
            PeerRole::ExSitu if matches!(body, Message::CursorLive { .. } | Message::CursorMarker { .. }) => Ok(()),
            PeerRole::ExSitu => Err(GateError::InSituOnly { kind }),
        }
    }

    /// Folds one sequenced message. Invalid payloads leave the state
    /// untouched (scene batches are applied delta by delta). Lossy and
    /// control messages carry no authored state and are ignored.
    pub fn fold(&mut self, envelope: &WireEnvelope, session: &SessionId) -> Result<(), FoldError> {
        let claimed = match &envelope.body {
            Message::CaptureCloud { cloud } => Some(&cloud.session_id),
            Message::AnnotationAdd { annotation } => Some(&annotation.session_id),
            Message::CursorMarker { marker } => Some(&marker.session_id),
            Message::ScreenshotAnchor { screenshot } => Some(&screenshot.session_id),
            Message::MeshBlockUpdate { .. } => Some(session),
            _ => None,
        };
        if let Some(s) = claimed.filter(|s| !s.is_path_safe()) {
            return Err(FoldError::InvalidSessionId(s.as_str().to_owned()));
        }
        match &envelope.body {
            Message::SceneDeltas { deltas } => {
                let mut rejected = Vec::new();
                for (index, d) in deltas.iter().enumerate() {
                    if let Err(error) = scene::apply_delta(&mut self.scene, d) {
                        rejected.push(RejectedDelta { index, error });
                    }
                }
                if !rejected.is_empty() {
                    return Err(FoldError::Scene(rejected));
                }
            }
            Message::CaptureCloud { cloud } => {
                cloud.validate()?;
                if self.clouds.contains_key(&cloud.capture_id) || self.meshes.contains_key(&cloud.capture_id) {
                    return Err(FoldError::Duplicate("capture"));
                }
                self.clouds.insert(cloud.capture_id, cloud.clone());
            }
            Message::MeshBlockUpdate {
                capture_id,
                key,
                block_size,
                mesh,
            } => {
                if !(block_size.is_finite() && *block_size > 0.0) {
                    return Err(FoldError::BlockSizeMismatch {
                        expected: f64::NAN,
                        got: *block_size,
                    });
                }
                if self.clouds.contains_key(capture_id) {
                    return Err(FoldError::Duplicate("capture"));
                }
                let fresh = MeshCapture {
                    blocks: MeshBlockSet::new(*capture_id, session.clone(), *block_size),
                    stopped: false,
                };
                let existing = self.meshes.get(capture_id);
                let capture = existing.unwrap_or(&fresh);
                if capture.stopped {
                    return Err(FoldError::CaptureClosed(*capture_id));
                }
                if capture.blocks.block_size != *block_size {
                    return Err(FoldError::BlockSizeMismatch {
                        expected: capture.blocks.block_size,
                        got: *block_size,
                    });
                }
                capture.blocks.check_block(*key, mesh)?;
                self.meshes
                    .entry(*capture_id)
                    .or_insert(fresh)
                    .blocks
                    .blocks
                    .insert(*key, mesh.clone());
            }
            Message::CaptureStopped { capture_id } => {
                let capture = self
                    .meshes
                    .get_mut(capture_id)
                    .ok_or(FoldError::UnknownCapture(*capture_id))?;
                if capture.stopped {
                    return Err(FoldError::CaptureClosed(*capture_id));
                }
                capture.stopped = true;
            }
            Message::AnnotationAdd { annotation } => {
                annotation.validate()?;
                if self.annotations.contains_key(&annotation.id) {
                    return Err(FoldError::Duplicate("annotation"));
                }
                self.annotations.insert(annotation.id, annotation.clone());
            }
            Message::CursorMarker { marker } => {
                if !marker.cursor.position.is_finite() {
                    return Err(FoldError::Capture(CaptureError::Geometry(
                        crate::geometry::GeometryError::NonFinite,
                    )));
                }
                if self.markers.contains_key(&marker.id) {
                    return Err(FoldError::Duplicate("marker"));
                }
                let mut m = marker.clone();
                m.cursor.live = false;
                self.markers.insert(m.id, m);
            }
            Message::ScreenshotAnchor { screenshot } => {
                if self.screenshots.contains_key(&screenshot.id) {
                    return Err(FoldError::Duplicate("screenshot"));
                }
                self.screenshots.insert(screenshot.id, screenshot.clone());
            }
            Message::LocalizationEvent { peer, phase } => {
                self.localization.insert(peer.clone(), *phase);
            }
            Message::CursorLive { .. }
            | Message::PresencePose { .. }
            | Message::ViewFrame { .. }
            | Message::Control { .. } => {}
        }
        Ok(())
    }

    /// Session ids that produced any capture, annotation, marker or screenshot.
    pub fn sessions(&self) -> std::collections::BTreeSet<SessionId> {
        let mut out = std::collections::BTreeSet::new();
        out.extend(self.clouds.values().map(|c| c.session_id.clone()));
        out.extend(self.meshes.values().map(|m| m.blocks.session_id.clone()));
        out.extend(self.annotations.values().map(|a| a.session_id.clone()));
        out.extend(self.markers.values().map(|m| m.session_id.clone()));
        out.extend(self.screenshots.values().map(|s| s.session_id.clone()));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerInfo {
    pub peer: PeerId,
    pub role: PeerRole,
    pub joined_at: TimestampMs,
    /// Last reported device pose and location-mesh opacity.
    pub pose: Option<crate::geometry::Pose>,
    pub opacity: Option<f64>,
}

/// Full materialized state as of a server sequence number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub room: RoomId,
    pub session_id: SessionId,
    pub as_of: u64,
    pub state: RoomState,
    pub peers: Vec<PeerInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplicaError {
    #[error("sequence gap: expected {expected}, got {got}")]
    Gap { expected: u64, got: u64 },
    #[error("envelope has no server sequence number")]
    Unsequenced,
}

/// Client-side mirror of a room: a snapshot plus the live tail.
#[derive(Clone, Debug, PartialEq)]
pub struct Replica {
    pub session_id: SessionId,
    pub as_of: u64,
    pub state: RoomState,
}

impl Replica {
    pub fn from_snapshot(s: &Snapshot) -> Self {
        Self {
            session_id: s.session_id.clone(),
            as_of: s.as_of,
            state: s.state.clone(),
        }
    }

    /// Folds the next sequenced envelope. Returns false for envelopes already
    /// covered by the snapshot.
    pub fn apply(&mut self, env: &WireEnvelope) -> Result<bool, ReplicaError> {
        let seq = env.server_seq.ok_or(ReplicaError::Unsequenced)?;
        if seq <= self.as_of {
            return Ok(false);
        }
        if seq != self.as_of + 1 {
            return Err(ReplicaError::Gap {
                expected: self.as_of + 1,
                got: seq,
            });
        }
        // Rejections are deterministic and mirrored on the relay.
        let _ = self.state.fold(env, &self.session_id);
        self.as_of = seq;
        Ok(true)
    }

    pub fn hash(&self) -> Digest {
        self.state.hash()
    }
}
