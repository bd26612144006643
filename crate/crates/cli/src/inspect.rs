use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use anyhow::Context;
use arco_core::ids::{PeerId, PeerRole, RoomId, SessionId};
use arco_core::persistence::{load_log, load_scene, replay, BASE_DIR, LOG_FILE, SCENE_FILE};
use arco_core::protocol::{Control, Message, MESSAGE_KINDS};
use arco_core::state::RoomState;
use serde::Serialize;

/// Message counts for one kind, split by sender role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RoleCounts {
    pub in_situ: usize,
    pub ex_situ: usize,
    /// Senders with no join on record.
    pub unknown: usize,
}

impl RoleCounts {
    pub fn total(&self) -> usize {
        self.in_situ + self.ex_situ + self.unknown
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Inspection {
    pub session_id: SessionId,
    pub room: Option<RoomId>,
    pub records: usize,
    pub last_seq: u64,
    pub peers: BTreeMap<PeerId, PeerRole>,
    pub span_ms: u64,
    /// Sequenced records whose payload the room refused.
    pub rejected: usize,
    pub counts: BTreeMap<String, RoleCounts>,
    /// First unreadable log line, if any. Later lines are ignored.
    pub corrupt: Option<String>,
}

/// Summarizes a session directory. A directory without a log reads as an
/// empty session.
pub fn inspect_session(dir: &Path) -> anyhow::Result<Inspection> {
    anyhow::ensure!(dir.is_dir(), "{} is not a session directory", dir.display());
    let session_id = SessionId::new(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    let log_path = dir.join(LOG_FILE);
    let (records, corrupt) = if log_path.exists() {
        let loaded = load_log(&log_path).with_context(|| format!("reading {}", log_path.display()))?;
        (loaded.records, loaded.corrupt.map(|e| e.to_string()))
    } else {
        (Vec::new(), None)
    };

    let mut peers = BTreeMap::new();
    for r in &records {
        if let Message::Control {
            control: Control::Join { peer, role },
        } = &r.envelope.body
        {
            peers.insert(peer.clone(), *role);
        }
    }
    let mut counts: BTreeMap<String, RoleCounts> = MESSAGE_KINDS.iter().map(|k| (k.to_string(), RoleCounts::default())).collect();
    for r in &records {
        let c = counts.entry(r.envelope.body.kind().to_owned()).or_default();
        match peers.get(&r.envelope.sender) {
            Some(PeerRole::InSitu) => c.in_situ += 1,
            Some(PeerRole::ExSitu) => c.ex_situ += 1,
            None => c.unknown += 1,
        }
    }

    let base_dir = dir.join(BASE_DIR);
    let base = if base_dir.join(SCENE_FILE).exists() {
        load_scene(&base_dir).with_context(|| format!("loading {}", base_dir.display()))?
    } else {
        RoomState::default()
    };
    let outcome = replay(&records, base, &session_id);
    let span_ms = match (records.first(), records.last()) {
        (Some(a), Some(b)) => b.wall_time.saturating_sub(a.wall_time),
        _ => 0,
    };
    Ok(Inspection {
        session_id,
        room: records.first().map(|r| r.envelope.room.clone()),
        records: records.len(),
        last_seq: outcome.last_seq,
        peers,
        span_ms,
        rejected: outcome.rejected,
        counts,
        corrupt,
    })
}

impl Inspection {
    /// Human-readable summary and feature-usage table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let room = self.room.as_ref().map(|r| r.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "session   {}", self.session_id);
        let _ = writeln!(s, "room      {room}");
        let _ = writeln!(s, "records   {}", self.records);
        let _ = writeln!(s, "last_seq  {}", self.last_seq);
        let _ = writeln!(s, "span      {:.3} s", self.span_ms as f64 / 1000.0);
        let _ = writeln!(s, "rejected  {}", self.rejected);
        let in_situ = self.peers.values().filter(|r| **r == PeerRole::InSitu).count();
        let _ = writeln!(s, "peers     {} ({} in-situ, {} ex-situ)", self.peers.len(), in_situ, self.peers.len() - in_situ);
        if let Some(c) = &self.corrupt {
            let _ = writeln!(s, "corrupt   {c}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<20} {:>8} {:>8} {:>8} {:>8}", "kind", "in-situ", "ex-situ", "unknown", "total");
        let mut sum = RoleCounts::default();
        for (kind, c) in &self.counts {
            let _ = writeln!(s, "{kind:<20} {:>8} {:>8} {:>8} {:>8}", c.in_situ, c.ex_situ, c.unknown, c.total());
            sum.in_situ += c.in_situ;
            sum.ex_situ += c.ex_situ;
            sum.unknown += c.unknown;
        }
        let _ = writeln!(s, "{:<20} {:>8} {:>8} {:>8} {:>8}", "total", sum.in_situ, sum.ex_situ, sum.unknown, sum.total());
        s
    }
}
