//! Wire model: sequenced, channel-tagged envelopes carried one per
//! WebSocket text frame, plus sender-side coalescing and flush batching.

mod codec;
mod coalesce;
mod queue;

use serde::{Deserialize, Serialize};

use crate::annotation::{Annotation, Cursor, Marker};
use crate::canonical::base64_bytes;
use crate::capture::{BlockKey, PointCloud};
use crate::geometry::{CameraView, Pose, TriangleMesh};
use crate::ids::{CaptureId, PeerId, PeerRole, RoomId, ScreenshotId, SessionId, TimestampMs};
use crate::localization::LocalizationPhase;
use crate::scene::Delta;
use crate::state::Snapshot;

pub use codec::{decode, encode, ProtocolError};
pub use coalesce::{coalesce, CoalesceKey};
pub use queue::{FlushPolicy, SendQueue, DEFAULT_FLUSH_BYTES, DEFAULT_FLUSH_WINDOW_MS};

pub const PROTO_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Sequenced, persisted, never dropped.
    ReliableOrdered,
    /// Latest-wins; may be dropped anywhere along the way.
    LossyLatest,
}

/// Image of the in-situ screen, anchored at the camera pose it was taken from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Screenshot {
    pub id: ScreenshotId,
    pub session_id: SessionId,
    /// Peer whose screen was captured.
    pub peer: PeerId,
    pub taken_by: PeerId,
    #[serde(with = "base64_bytes")]
    pub image: Vec<u8>,
    pub pose: Pose,
    pub taken_at: TimestampMs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Control {
    Join { peer: PeerId, role: PeerRole },
    Leave { peer: PeerId },
    SnapshotRequest,
    Snapshot { snapshot: Box<Snapshot> },
    Error { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    SceneDeltas {
        deltas: Vec<Delta>,
    },
    CaptureCloud {
        cloud: PointCloud,
    },
    MeshBlockUpdate {
        capture_id: CaptureId,
        key: BlockKey,
        block_size: f64,
        mesh: TriangleMesh,
    },
    CaptureStopped {
        capture_id: CaptureId,
    },
    AnnotationAdd {
        annotation: Annotation,
    },
    CursorLive {
        cursor: Cursor,
    },
    CursorMarker {
        marker: Marker,
    },
    PresencePose {
        peer: PeerId,
        pose: Pose,
        /// Location-mesh opacity this peer renders with.
        opacity: f64,
    },
    ViewFrame {
        peer: PeerId,
        #[serde(with = "base64_bytes")]
        frame: Vec<u8>,
        camera: CameraView,
    },
    ScreenshotAnchor {
        screenshot: Screenshot,
    },
    LocalizationEvent {
        peer: PeerId,
        phase: LocalizationPhase,
    },
    Control {
        control: Control,
    },
}

/// Every message kind, in a fixed order (used for reporting).
pub const MESSAGE_KINDS: [&str; 12] = [
    "scene_deltas",
    "capture_cloud",
    "mesh_block_update",
    "capture_stopped",
    "annotation_add",
    "cursor_live",
    "cursor_marker",
    "presence_pose",
    "view_frame",
    "screenshot_anchor",
    "localization_event",
    "control",
];

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::SceneDeltas { .. } => "scene_deltas",
            Message::CaptureCloud { .. } => "capture_cloud",
            Message::MeshBlockUpdate { .. } => "mesh_block_update",
            Message::CaptureStopped { .. } => "capture_stopped",
            Message::AnnotationAdd { .. } => "annotation_add",
            Message::CursorLive { .. } => "cursor_live",
            Message::CursorMarker { .. } => "cursor_marker",
            Message::PresencePose { .. } => "presence_pose",
            Message::ViewFrame { .. } => "view_frame",
            Message::ScreenshotAnchor { .. } => "screenshot_anchor",
            Message::LocalizationEvent { .. } => "localization_event",
            Message::Control { .. } => "control",
        }
    }

    /// The channel is a property of the message kind.
    pub fn channel(&self) -> Channel {
        match self {
            Message::CursorLive { .. } | Message::PresencePose { .. } | Message::ViewFrame { .. } => {
                Channel::LossyLatest
            }
            _ => Channel::ReliableOrdered,
        }
    }

    /// Spatial captures, annotations and cursors: only an in-situ peer that
    /// is localized may emit these.
    pub fn requires_localization(&self) -> bool {
        matches!(
            self,
            Message::CaptureCloud { .. }
                | Message::MeshBlockUpdate { .. }
                | Message::CaptureStopped { .. }
                | Message::AnnotationAdd { .. }
                | Message::CursorLive { .. }
                | Message::CursorMarker { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireEnvelope {
    pub proto_version: u32,
    pub room: RoomId,
    pub sender: PeerId,
    /// Assigned by the relay to reliable messages; strictly increasing per room.
    pub server_seq: Option<u64>,
    pub client_seq: u64,
    pub channel: Channel,
    pub sent_at: TimestampMs,
    pub body: Message,
}

impl WireEnvelope {
    pub fn new(room: RoomId, sender: PeerId, client_seq: u64, sent_at: TimestampMs, body: Message) -> Self {
        Self {
            proto_version: PROTO_VERSION,
            room,
            sender,
            server_seq: None,
            client_seq,
            channel: body.channel(),
            sent_at,
            body,
        }
    }

    pub fn is_reliable(&self) -> bool {
        self.channel == Channel::ReliableOrdered
    }
}
