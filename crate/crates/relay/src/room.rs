use std::collections::BTreeMap;
use std::sync::Arc;

use arco_core::canonical::Digest;
use arco_core::geometry::Pose;
use arco_core::ids::{PeerId, PeerRole, RoomId, SessionId, TimestampMs};
use arco_core::persistence::LogRecord;
use arco_core::protocol::{Control, Message, WireEnvelope};
use arco_core::state::{FoldError, GateError, PeerInfo, RoomState, Snapshot};
use thiserror::Error;

/// Sender id the relay uses for messages it originates.
pub const RELAY_PEER: &str = "@relay";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelayError {
    #[error("peer {0} is already in the room")]
    DuplicatePeer(PeerId),
    #[error("peer {0} is not in the room")]
    UnknownPeer(PeerId),
    #[error("invalid peer id {0:?}")]
    InvalidPeerId(String),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("rejected: {0}")]
    Rejected(#[from] GateError),
    #[error("room is closing")]
    RoomClosed,
}

/// One message addressed to one peer.
#[derive(Clone, Debug, PartialEq)]
pub struct Outbound {
    pub to: PeerId,
    pub envelope: Arc<WireEnvelope>,
}

/// Effects of one room operation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Routed {
    /// Present when the operation consumed a sequence number.
    pub record: Option<LogRecord>,
    pub outbound: Vec<Outbound>,
    /// The sequenced payload was invalid and did not change the state.
    pub fold_error: Option<FoldError>,
}

#[derive(Clone, Debug, PartialEq)]
struct PeerEntry {
    role: PeerRole,
    joined_at: TimestampMs,
    pose: Option<Pose>,
    opacity: Option<f64>,
}

/// Room state machine. Pure: no I/O, time is passed in.
///
/// Reliable messages are sequenced, folded and echoed to every peer
/// (including the sender, which uses the echo as its acknowledgement and
/// only folds server-sequenced messages). Lossy messages go to everyone
/// else unsequenced.
#[derive(Clone, Debug)]
pub struct Room {
    id: RoomId,
    session_id: SessionId,
    last_seq: u64,
    state: RoomState,
    peers: BTreeMap<PeerId, PeerEntry>,
}

pub fn valid_peer_id(p: &str) -> bool {
    !p.is_empty() && p.len() <= 64 && !p.starts_with('@') && !p.chars().any(char::is_control)
}

impl Room {
    pub fn new(id: RoomId, session_id: SessionId, base: RoomState) -> Self {
        Self {
            id,
            session_id,
            last_seq: 0,
            state: base,
            peers: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &RoomId {
        &self.id
    }

    pub fn session_id(&self) -> &SessionId {
        &self.session_id
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn state(&self) -> &RoomState {
        &self.state
    }

    pub fn room_hash(&self) -> Digest {
        self.state.hash()
    }

    pub fn peer_count(&self) -> usize {
        self.peers.len()
    }

    pub fn has_peer(&self, p: &PeerId) -> bool {
        self.peers.contains_key(p)
    }

    pub fn peer_ids(&self) -> impl Iterator<Item = &PeerId> {
        self.peers.keys()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            room: self.id.clone(),
            session_id: self.session_id.clone(),
            as_of: self.last_seq,
            state: self.state.clone(),
            peers: self
                .peers
                .iter()
                .map(|(peer, e)| PeerInfo {
                    peer: peer.clone(),
                    role: e.role,
                    joined_at: e.joined_at,
                    pose: e.pose,
                    opacity: e.opacity,
                })
                .collect(),
        }
    }

    /// Envelope from the relay itself (snapshots, errors).
    pub fn relay_envelope(&self, now: TimestampMs, control: Control) -> WireEnvelope {
        WireEnvelope::new(self.id.clone(), PeerId::new(RELAY_PEER), 0, now, Message::Control { control })
    }

    /// Registers `peer`. The returned outbound list starts with the joiner's
    /// snapshot (as of its own Join) followed by the Join broadcast.
    pub fn join(&mut self, peer: PeerId, role: PeerRole, now: TimestampMs) -> Result<Routed, RelayError> {
        if !valid_peer_id(peer.as_str()) {
            return Err(RelayError::InvalidPeerId(peer.as_str().to_owned()));
        }
        if self.peers.contains_key(&peer) {
            return Err(RelayError::DuplicatePeer(peer));
        }
        self.peers.insert(peer.clone(), PeerEntry {
            role,
            joined_at: now,
            pose: None,
            opacity: None,
        });
        let env = WireEnvelope::new(self.id.clone(), peer.clone(), 0, now, Message::Control {
            control: Control::Join {
                peer: peer.clone(),
                role,
            },
        });
        let mut routed = self.sequence(env, now);
        let snapshot = self.relay_envelope(now, Control::Snapshot {
            snapshot: Box::new(self.snapshot()),
        });
        routed.outbound.retain(|o| o.to != peer);
        routed.outbound.insert(0, Outbound {
            to: peer,
            envelope: Arc::new(snapshot),
        });
        Ok(routed)
    }

    /// Removes `peer` and broadcasts its Leave. Authored state is retained.
    pub fn leave(&mut self, peer: &PeerId, now: TimestampMs) -> Result<Routed, RelayError> {
        if self.peers.remove(peer).is_none() {
            return Err(RelayError::UnknownPeer(peer.clone()));
        }
        let env = WireEnvelope::new(self.id.clone(), peer.clone(), 0, now, Message::Control {
            control: Control::Leave { peer: peer.clone() },
        });
        Ok(self.sequence(env, now))
    }

    pub fn route(&mut self, env: WireEnvelope, now: TimestampMs) -> Result<Routed, RelayError> {
        let role = self
            .peers
            .get(&env.sender)
            .map(|e| e.role)
            .ok_or_else(|| RelayError::UnknownPeer(env.sender.clone()))?;
        if env.room != self.id {
            return Err(RelayError::MalformedMessage(format!("envelope addressed to room {}", env.room)));
        }
        if env.server_seq.is_some() {
            return Err(RelayError::MalformedMessage("clients may not assign server_seq".into()));
        }
        if env.channel != env.body.channel() {
            return Err(RelayError::MalformedMessage(format!("{} on wrong channel", env.body.kind())));
        }
        if let Message::Control { control } = &env.body {
            return match control {
                Control::SnapshotRequest => Ok(Routed {
                    outbound: vec![Outbound {
                        to: env.sender.clone(),
                        envelope: Arc::new(self.relay_envelope(now, Control::Snapshot {
                            snapshot: Box::new(self.snapshot()),
                        })),
                    }],
                    ..Default::default()
                }),
                _ => Err(RelayError::MalformedMessage("clients may only send snapshot requests".into())),
            };
        }
        self.state.admits(&env.sender, role, &env.body)?;

        if env.is_reliable() {
            return Ok(self.sequence(env, now));
        }
        if let Message::PresencePose { pose, opacity, .. } = &env.body {
            if let Some(e) = self.peers.get_mut(&env.sender) {
                e.pose = Some(*pose);
                e.opacity = Some(*opacity);
            }
        }
        let envelope = Arc::new(env);
        let outbound = self
            .peers
            .keys()
            .filter(|p| **p != envelope.sender)
            .map(|p| Outbound {
                to: p.clone(),
                envelope: envelope.clone(),
            })
            .collect();
        Ok(Routed {
            outbound,
            ..Default::default()
        })
    }

    fn sequence(&mut self, mut env: WireEnvelope, now: TimestampMs) -> Routed {
        self.last_seq += 1;
        env.server_seq = Some(self.last_seq);
        let fold_error = self.state.fold(&env, &self.session_id).err();
        let record = LogRecord {
            envelope: env,
            wall_time: now,
        };
        let envelope = Arc::new(record.envelope.clone());
        let outbound = self
            .peers
            .keys()
            .map(|p| Outbound {
                to: p.clone(),
                envelope: envelope.clone(),
            })
            .collect();
        Routed {
            record: Some(record),
            outbound,
            fold_error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use arco_core::ids::ObjectId;
    use arco_core::scene::{Delta, SceneObject};

    fn room() -> Room {
        Room::new("r".into(), SessionId::new("s"), RoomState::default())
    }

    fn create(sender: &str, id: u128) -> WireEnvelope {
        WireEnvelope::new("r".into(), sender.into(), 1, 5, Message::SceneDeltas {
            deltas: vec![Delta::Create {
                object: SceneObject::new(ObjectId(id), "o"),
            }],
        })
    }

    #[test]
    fn first_join_gets_empty_snapshot() {
        let mut r = room();
        let out = r.join("a".into(), PeerRole::ExSitu, 0).unwrap();
        assert_eq!(out.outbound.len(), 1);
        match &out.outbound[0].envelope.body {
            Message::Control {
                control: Control::Snapshot { snapshot },
            } => {
                assert_eq!(snapshot.as_of, 1);
                assert!(snapshot.state.scene.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_peer_rejected() {
        let mut r = room();
        r.join("a".into(), PeerRole::ExSitu, 0).unwrap();
        assert_eq!(
            r.join("a".into(), PeerRole::InSitu, 0).unwrap_err(),
            RelayError::DuplicatePeer("a".into())
        );
    }

    #[test]
    fn reliable_is_sequenced_and_echoed() {
        let mut r = room();
        r.join("a".into(), PeerRole::ExSitu, 0).unwrap();
        r.join("b".into(), PeerRole::ExSitu, 0).unwrap();
        let out = r.route(create("a", 1), 1).unwrap();
        assert_eq!(out.record.as_ref().unwrap().seq(), 3);
        let to: Vec<_> = out.outbound.iter().map(|o| o.to.as_str()).collect();
        assert_eq!(to, vec!["a", "b"]);
        assert!(out.outbound.iter().all(|o| o.envelope.server_seq == Some(3)));
    }

    #[test]
    fn unknown_sender_rejected() {
        let mut r = room();
        assert!(matches!(r.route(create("x", 1), 0), Err(RelayError::UnknownPeer(_))));
    }

    #[test]
    fn leave_keeps_authored_state() {
        let mut r = room();
        r.join("a".into(), PeerRole::ExSitu, 0).unwrap();
        r.route(create("a", 1), 1).unwrap();
        let h = r.room_hash();
        r.leave(&"a".into(), 2).unwrap();
        assert_eq!(r.room_hash(), h);
        assert_eq!(r.peer_count(), 0);
        assert!(matches!(r.leave(&"a".into(), 3), Err(RelayError::UnknownPeer(_))));
    }
}
