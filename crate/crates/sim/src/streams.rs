//! Random message streams over a deliberately small key space, for checking
//! that batching never changes what a room ends up holding.

use std::collections::BTreeSet;

use arco_core::annotation::Cursor;
use arco_core::capture::BlockKey;
use arco_core::geometry::{Pose, TriangleMesh, Vec3};
use arco_core::ids::{CaptureId, ObjectId, PeerId, PeerRole, RoomId, SessionId};
use arco_core::protocol::{Message, WireEnvelope};
use arco_core::scene::{Delta, ObjectTransform, ParamValue, SceneObject};
use arco_core::state::{FoldError, RoomState};
use rand::Rng;

const OBJECTS: u128 = 4;
const PARAMS: [&str; 2] = ["speed", "label"];

fn small_triangle(key: BlockKey, jitter: f64) -> TriangleMesh {
    let o = Vec3::new(f64::from(key.ix), f64::from(key.iy), f64::from(key.iz)) + Vec3::new(0.1 + jitter, 0.1, 0.1);
    TriangleMesh::new(vec![o, o + Vec3::new(0.5, 0.0, 0.0), o + Vec3::new(0.0, 0.5, 0.0)], vec![[0, 1, 2]])
        .expect("indices in range")
}

fn random_delta<R: Rng + ?Sized>(rng: &mut R) -> Delta {
    let id = ObjectId(rng.random_range(1..=OBJECTS + 1));
    match rng.random_range(0..100) {
        0..45 => Delta::SetTransform {
            id,
            transform: ObjectTransform {
                position: Vec3::new(f64::from(rng.random_range(0..8u8)) * 0.5, 0.0, 0.0),
                ..Default::default()
            },
        },
        45..65 => Delta::SetParam {
            id,
            name: PARAMS[rng.random_range(0..PARAMS.len())].to_owned(),
            value: rng.random_bool(0.85).then(|| ParamValue::Int(rng.random_range(0..6))),
        },
        65..78 => Delta::Rename {
            id,
            name: format!("n{}", rng.random_range(0..4u8)),
        },
        78..86 => Delta::SetParent {
            id,
            parent: rng.random_bool(0.6).then(|| ObjectId(rng.random_range(1..=OBJECTS))),
        },
        86..93 => Delta::Destroy { id },
        _ => Delta::Create {
            object: SceneObject::new(id, "again"),
        },
    }
}

/// `len` envelopes from one in-situ sender: scene edits, mesh blocks on a
/// handful of keys, occasional capture stops and interleaved lossy traffic.
pub fn redundant_stream<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<WireEnvelope> {
    let room = RoomId::new("r");
    let sender = PeerId::new("dev");
    let mut out = Vec::with_capacity(len + 1);
    let setup = (1..=OBJECTS)
        .map(|i| Delta::Create {
            object: SceneObject::new(ObjectId(i), format!("o{i}")),
        })
        .collect();
    out.push(Message::SceneDeltas { deltas: setup });
    while out.len() < len {
        let body = match rng.random_range(0..100) {
            0..45 => Message::SceneDeltas {
                deltas: (0..rng.random_range(1..=3)).map(|_| random_delta(rng)).collect(),
            },
            45..80 => {
                let key = BlockKey::new(rng.random_range(0..3), 0, 0);
                Message::MeshBlockUpdate {
                    capture_id: CaptureId(rng.random_range(1..=2)),
                    key,
                    block_size: 1.0,
                    mesh: small_triangle(key, f64::from(rng.random_range(0..4u8)) * 0.05),
                }
            }
            80..83 => Message::CaptureStopped {
                capture_id: CaptureId(rng.random_range(1..=2)),
            },
            83..92 => Message::CursorLive {
                cursor: Cursor {
                    peer: sender.clone(),
                    role: PeerRole::InSitu,
                    position: Vec3::new(f64::from(rng.random_range(0..10u8)), 0.0, 1.0),
                    normal: None,
                    live: true,
                },
            },
            _ => Message::PresencePose {
                peer: sender.clone(),
                pose: Pose::from_translation(Vec3::new(f64::from(rng.random_range(0..10u8)), 0.0, 0.0)),
                opacity: 1.0,
            },
        };
        out.push(body);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, body)| WireEnvelope::new(room.clone(), sender.clone(), i as u64 + 1, 1_000 + i as u64, body))
        .collect()
}

/// Share of writes that repeat a key written earlier in the stream.
pub fn redundancy(stream: &[WireEnvelope]) -> f64 {
    let mut seen = BTreeSet::new();
    let (mut writes, mut repeats) = (0usize, 0usize);
    let mut note = |key: String| {
        writes += 1;
        if !seen.insert(key) {
            repeats += 1;
        }
    };
    for e in stream {
        match &e.body {
            Message::SceneDeltas { deltas } => {
                for d in deltas {
                    note(format!("{}/{}", d.object(), d.field()));
                }
            }
            Message::MeshBlockUpdate { capture_id, key, .. } => note(format!("{capture_id}/{key}")),
            Message::CaptureStopped { capture_id } => note(format!("stop/{capture_id}")),
            other => note(format!("{}/{}", other.kind(), e.sender)),
        }
    }
    if writes == 0 {
        0.0
    } else {
        repeats as f64 / writes as f64
    }
}

/// Folds every reliable envelope in order, as the relay would, and returns
/// the resulting room.
pub fn fold_all(stream: &[WireEnvelope], session: &SessionId) -> (RoomState, Vec<FoldError>) {
    let mut state = RoomState::default();
    let mut errors = Vec::new();
    for (i, e) in stream.iter().filter(|e| e.is_reliable()).enumerate() {
        let mut e = e.clone();
        e.server_seq = Some(i as u64 + 1);
        if let Err(err) = state.fold(&e, session) {
            errors.push(err);
        }
    }
    (state, errors)
}
