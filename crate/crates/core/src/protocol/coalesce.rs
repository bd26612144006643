use std::collections::HashSet;

use super::{Message, WireEnvelope};
use crate::capture::{BlockKey, MeshBlockSet};
use crate::ids::{CaptureId, ObjectId, PeerId};
use crate::scene::Delta;

/// Messages sharing a key are redundant: only the newest matters.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CoalesceKey {
    Field(ObjectId, String),
    /// Block size is part of the key: a capture's grid is fixed by its first block.
    Block(CaptureId, BlockKey, u64),
    Lossy(&'static str, PeerId),
}

/// Collapses redundant same-key messages, keeping the newest of each key and
/// the original relative order of every survivor.
///
/// Scene deltas are keyed per (object, field). Create and Destroy are never
/// dropped and act as barriers: a field write is only superseded by a later
/// write to the same field with no Create/Destroy in between, since either
/// may change whether the object exists. SetParent is never dropped because
/// cycle checks make reparenting order-sensitive. Mesh blocks are keyed per
/// (capture, block), with a capture's stop acting as a barrier; live cursors, presence and view frames per peer.
/// Everything else passes through untouched.
pub fn coalesce(pending: Vec<WireEnvelope>) -> Vec<WireEnvelope> {
    // Walk backwards, marking which items survive.
    let mut seen: HashSet<CoalesceKey> = HashSet::new();
    let mut keep_env = vec![true; pending.len()];
    let mut keep_delta: Vec<Vec<bool>> = pending
        .iter()
        .map(|e| match &e.body {
            Message::SceneDeltas { deltas } => vec![true; deltas.len()],
            _ => Vec::new(),
        })
        .collect();

    for (i, env) in pending.iter().enumerate().rev() {
        match &env.body {
            Message::SceneDeltas { deltas } => {
                for (j, d) in deltas.iter().enumerate().rev() {
                    match d {
                        Delta::Create { .. } | Delta::Destroy { .. } => {
                            seen.retain(|k| !matches!(k, CoalesceKey::Field(..)));
                        }
                        Delta::SetParent { .. } => {}
                        _ => {
                            let key = CoalesceKey::Field(d.object(), d.field());
                            if seen.contains(&key) {
                                keep_delta[i][j] = false;
                            } else if payload_valid(d) {
                                seen.insert(key);
                            }
                        }
                    }
                }
            }
            Message::MeshBlockUpdate {
                capture_id,
                key,
                block_size,
                mesh,
            } => {
                let k = CoalesceKey::Block(*capture_id, *key, block_size.to_bits());
                if seen.contains(&k) {
                    keep_env[i] = false;
                } else if block_valid(*block_size, *key, mesh) {
                    seen.insert(k);
                }
            }
            // Blocks after a stop are rejected, so a stop shields earlier ones.
            Message::CaptureStopped { capture_id } => {
                seen.retain(|k| !matches!(k, CoalesceKey::Block(c, ..) if c == capture_id));
            }
            Message::CursorLive { .. } | Message::PresencePose { .. } | Message::ViewFrame { .. } => {
                let k = CoalesceKey::Lossy(env.body.kind(), env.sender.clone());
                if !seen.insert(k) {
                    keep_env[i] = false;
                }
            }
            _ => {}
        }
    }

    let mut out: Vec<WireEnvelope> = Vec::with_capacity(pending.len());
    for ((env, keep), mask) in pending.into_iter().zip(keep_env).zip(keep_delta) {
        if !keep {
            continue;
        }
        match env.body {
            Message::SceneDeltas { deltas } => {
                let survivors: Vec<Delta> = deltas
                    .into_iter()
                    .zip(mask)
                    .filter_map(|(d, k)| k.then_some(d))
                    .collect();
                if survivors.is_empty() {
                    continue;
                }
                // Re-bundle runs of adjacent delta messages into one.
                if let Some(WireEnvelope {
                    body: Message::SceneDeltas { deltas: prev },
                    ..
                }) = out.last_mut()
                {
                    prev.extend(survivors);
                } else {
                    out.push(WireEnvelope {
                        body: Message::SceneDeltas { deltas: survivors },
                        ..env
                    });
                }
            }
            _ => out.push(env),
        }
    }
    out
}

/// A write only supersedes earlier ones if the receiver will accept it.
fn payload_valid(d: &Delta) -> bool {
    let mut probe = crate::scene::SceneState::new();
    let id = d.object();
    probe.objects.insert(id, crate::scene::SceneObject::new(id, ""));
    crate::scene::apply_delta(&mut probe, d).is_ok()
}

fn block_valid(block_size: f64, key: BlockKey, mesh: &crate::geometry::TriangleMesh) -> bool {
    block_size > 0.0
        && block_size.is_finite()
        && MeshBlockSet::new(CaptureId(0), "".into(), block_size)
            .check_block(key, mesh)
            .is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{TriangleMesh, Vec3};
    use crate::scene::{ObjectTransform, SceneObject};

    fn env(seq: u64, body: Message) -> WireEnvelope {
        WireEnvelope::new("r".into(), "p".into(), seq, seq, body)
    }

    fn block(capture: u128, key: BlockKey, x: f64) -> Message {
        Message::MeshBlockUpdate {
            capture_id: CaptureId(capture),
            key,
            block_size: 1.0,
            mesh: TriangleMesh::new(
                vec![Vec3::new(x, 0.0, 0.0), Vec3::new(x, 0.5, 0.0), Vec3::new(x, 0.0, 0.5)],
                vec![[0, 1, 2]],
            )
            .unwrap(),
        }
    }

    fn set_x(id: u128, x: f64) -> Delta {
        Delta::SetTransform {
            id: ObjectId(id),
            transform: ObjectTransform {
                position: Vec3::new(x, 0.0, 0.0),
                ..Default::default()
            },
        }
    }

    #[test]
    fn burst_of_same_block_keeps_last() {
        let k = BlockKey::new(0, 0, 0);
        let msgs: Vec<_> = (0..100).map(|i| env(i, block(1, k, i as f64 * 0.001))).collect();
        let out = coalesce(msgs);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].client_seq, 99);
    }

    #[test]
    fn survivors_keep_order_of_final_occurrence() {
        let (a, b) = (BlockKey::new(0, 0, 0), BlockKey::new(1, 0, 0));
        let out = coalesce(vec![
            env(1, block(1, a, 0.1)),
            env(2, block(1, b, 1.1)),
            env(3, block(1, a, 0.2)),
            env(4, block(1, b, 1.2)),
        ]);
        assert_eq!(out.iter().map(|e| e.client_seq).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn deltas_collapse_and_rebundle() {
        let out = coalesce(vec![
            env(1, Message::SceneDeltas { deltas: vec![set_x(1, 1.0), set_x(2, 1.0)] }),
            env(2, Message::SceneDeltas { deltas: vec![set_x(1, 2.0)] }),
            env(3, Message::SceneDeltas { deltas: vec![set_x(1, 3.0)] }),
        ]);
        assert_eq!(out.len(), 1);
        match &out[0].body {
            Message::SceneDeltas { deltas } => assert_eq!(deltas, &vec![set_x(2, 1.0), set_x(1, 3.0)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn create_destroy_are_barriers() {
        let create = Delta::Create {
            object: SceneObject::new(ObjectId(1), "a"),
        };
        let destroy = Delta::Destroy { id: ObjectId(1) };
        let deltas = vec![set_x(1, 1.0), destroy.clone(), create.clone(), set_x(1, 2.0)];
        let out = coalesce(vec![env(1, Message::SceneDeltas { deltas: deltas.clone() })]);
        match &out[0].body {
            Message::SceneDeltas { deltas: got } => assert_eq!(got, &deltas),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reliable_non_keyed_messages_never_dropped() {
        let stop = Message::CaptureStopped { capture_id: CaptureId(1) };
        let out = coalesce(vec![env(1, stop.clone()), env(2, stop.clone()), env(3, stop)]);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn invalid_write_does_not_shadow_valid_one() {
        let mut bad = set_x(1, 5.0);
        if let Delta::SetTransform { transform, .. } = &mut bad {
            transform.scale = Vec3::ZERO;
        }
        let out = coalesce(vec![env(1, Message::SceneDeltas { deltas: vec![set_x(1, 1.0), bad.clone()] })]);
        match &out[0].body {
            Message::SceneDeltas { deltas } => assert_eq!(deltas, &vec![set_x(1, 1.0), bad]),
            other => panic!("{other:?}"),
        }
    }
}
