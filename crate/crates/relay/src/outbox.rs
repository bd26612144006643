use std::collections::VecDeque;
use std::sync::Arc;

use arco_core::ids::PeerId;
use arco_core::protocol::WireEnvelope;

pub const DEFAULT_QUEUE_CAP: usize = 1000;

/// A reliable message did not fit: the peer must be disconnected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overflow;

/// Bounded per-peer outbound queue.
///
/// Lossy messages are latest-wins per (kind, sender): a newer one replaces
/// the queued one. When full, the oldest lossy message is dropped to make
/// room; if only reliable messages are queued, a lossy arrival is dropped
/// and a reliable arrival overflows.
#[derive(Debug)]
pub struct Outbox {
    cap: usize,
    queue: VecDeque<Arc<WireEnvelope>>,
    dropped_lossy: u64,
}

fn lossy_key(e: &WireEnvelope) -> Option<(&'static str, &PeerId)> {
    (!e.is_reliable()).then(|| (e.body.kind(), &e.sender))
}

impl Outbox {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0, "queue cap must be positive");
        Self {
            cap,
            queue: VecDeque::new(),
            dropped_lossy: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dropped_lossy(&self) -> u64 {
        self.dropped_lossy
    }

    pub fn has_reliable(&self) -> bool {
        self.queue.iter().any(|e| e.is_reliable())
    }

    pub fn push(&mut self, env: Arc<WireEnvelope>) -> Result<(), Overflow> {
        if let Some(key) = lossy_key(&env) {
            if let Some(i) = self.queue.iter().position(|q| lossy_key(q) == Some(key)) {
                self.queue.remove(i);
                self.dropped_lossy += 1;
            }
        }
        if self.queue.len() >= self.cap {
            match self.queue.iter().position(|q| !q.is_reliable()) {
                Some(i) => {
                    self.queue.remove(i);
                    self.dropped_lossy += 1;
                }
                None if !env.is_reliable() => {
                    self.dropped_lossy += 1;
                    return Ok(());
                }
                None => return Err(Overflow),
            }
        }
        self.queue.push_back(env);
        Ok(())
    }

    pub fn drain(&mut self) -> Vec<Arc<WireEnvelope>> {
        self.queue.drain(..).collect()
    }
}
