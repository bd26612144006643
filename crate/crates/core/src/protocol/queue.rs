use super::{coalesce, encode, WireEnvelope};
use crate::ids::TimestampMs;

pub const DEFAULT_FLUSH_WINDOW_MS: u64 = 50;
pub const DEFAULT_FLUSH_BYTES: usize = 64 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlushPolicy {
    pub window_ms: u64,
    pub max_bytes: usize,
}

impl Default for FlushPolicy {
    fn default() -> Self {
        Self {
            window_ms: DEFAULT_FLUSH_WINDOW_MS,
            max_bytes: DEFAULT_FLUSH_BYTES,
        }
    }
}

/// Per-peer outgoing buffer. A window opens with the first queued message
/// and is flushed (coalesced) once it has been open `window_ms` or has
/// accumulated `max_bytes` of encoded payload, whichever comes first.
#[derive(Clone, Debug, Default)]
pub struct SendQueue {
    policy: FlushPolicy,
    pending: Vec<WireEnvelope>,
    bytes: usize,
    opened_at: Option<TimestampMs>,
}

impl SendQueue {
    pub fn new(policy: FlushPolicy) -> Self {
        Self {
            policy,
            ..Default::default()
        }
    }

    pub fn policy(&self) -> FlushPolicy {
        self.policy
    }

    pub fn push(&mut self, envelope: WireEnvelope, now: TimestampMs) {
        self.bytes += encode(&envelope).len();
        self.opened_at.get_or_insert(now);
        self.pending.push(envelope);
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending_bytes(&self) -> usize {
        self.bytes
    }

    /// When the current window expires, if one is open.
    pub fn next_deadline(&self) -> Option<TimestampMs> {
        self.opened_at.map(|t| t + self.policy.window_ms)
    }

    /// Messages due at `now`; empty when nothing is due.
    pub fn flush_policy(&mut self, now: TimestampMs) -> Vec<WireEnvelope> {
        let due = match self.opened_at {
            None => false,
            Some(t) => self.bytes >= self.policy.max_bytes || now >= t + self.policy.window_ms,
        };
        if due {
            self.flush_now()
        } else {
            Vec::new()
        }
    }

    /// Flushes regardless of timing (e.g. on shutdown).
    pub fn flush_now(&mut self) -> Vec<WireEnvelope> {
        self.bytes = 0;
        self.opened_at = None;
        coalesce(std::mem::take(&mut self.pending))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::BlockKey;
    use crate::geometry::{TriangleMesh, Vec3};
    use crate::ids::CaptureId;
    use crate::protocol::Message;
    use crate::scene::Delta;
    use crate::ids::ObjectId;

    fn env(seq: u64, body: Message) -> WireEnvelope {
        WireEnvelope::new("r".into(), "p".into(), seq, seq, body)
    }

    #[test]
    fn empty_queue_flushes_nothing() {
        let mut q = SendQueue::default();
        assert!(q.flush_policy(1_000_000).is_empty());
        assert_eq!(q.next_deadline(), None);
    }

    #[test]
    fn single_delta_waits_for_window() {
        let mut q = SendQueue::default();
        q.push(env(1, Message::SceneDeltas { deltas: vec![Delta::Destroy { id: ObjectId(1) }] }), 100);
        assert!(q.flush_policy(149).is_empty());
        assert_eq!(q.next_deadline(), Some(150));
        assert_eq!(q.flush_policy(150).len(), 1);
        assert!(q.is_empty());
    }

    #[test]
    fn byte_threshold_splits_large_bursts() {
        let mut q = SendQueue::default();
        let mut flushes = Vec::new();
        let mut total = 0usize;
        let mut max_msg = 0usize;
        let mut i = 0u64;
        // Distinct blocks so nothing coalesces away.
        while total < 1 << 20 {
            let x = (i % 1000) as f64 + 0.25;
            let mesh = TriangleMesh::new(
                (0..40).map(|k| Vec3::new(x, 0.01 * k as f64, 0.5)).collect(),
                (0..38).map(|k| [k, k + 1, k + 2]).collect(),
            )
            .unwrap();
            let e = env(i, Message::MeshBlockUpdate {
                capture_id: CaptureId(i as u128 / 1000),
                key: BlockKey::new((i % 1000) as i32, 0, 0),
                block_size: 1.0,
                mesh,
            });
            let n = encode(&e).len();
            total += n;
            max_msg = max_msg.max(n);
            q.push(e, 0);
            let out = q.flush_policy(0);
            if !out.is_empty() {
                flushes.push(out.iter().map(|e| encode(e).len()).sum::<usize>());
            }
            i += 1;
        }
        let rest = q.flush_now();
        if !rest.is_empty() {
            flushes.push(rest.iter().map(|e| encode(e).len()).sum::<usize>());
        }
        assert_eq!(flushes.iter().sum::<usize>(), total);
        assert!(flushes.len() >= (1 << 20) / (DEFAULT_FLUSH_BYTES + max_msg));
        for f in flushes {
            assert!(f <= DEFAULT_FLUSH_BYTES + max_msg, "{f}");
        }
    }
}
