//! Discrete-event driver: every peer, the relay room and the network links
//! advance on one virtual microsecond clock, so a run is a pure function of
//! its scenario and seed.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::PathBuf;
use std::sync::Arc;

use arco_core::canonical::Digest;
use arco_core::geometry::TriangleMesh;
use arco_core::ids::{PeerId, PeerRole, RoomId, SessionId, TimestampMs};
use arco_core::protocol::{decode, encode, Control, FlushPolicy, Message, WireEnvelope};
use arco_relay::{open_session, resolve_base, Room, Routed, SessionStore, StorageConfig, RELAY_PEER};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::{ClientCore, ClientStats, ExAction, ExSituClient, InSituClient, LinkOp};
use crate::latency::{LatencyModel, LatencyStats};
use crate::trace::LoadedTrace;
use crate::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedExAction {
    pub at_ms: u64,
    pub action: ExAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExScript {
    pub peer: PeerId,
    pub actions: Vec<TimedExAction>,
}

/// Who takes part in a run and what they do.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub room: RoomId,
    pub base_time: TimestampMs,
    pub in_situ: Vec<Arc<LoadedTrace>>,
    pub ex_situ: Vec<ExScript>,
    /// Site mesh ex-situ cursors raycast against.
    pub site: Option<TriangleMesh>,
}

impl Scenario {
    pub fn action_count(&self) -> usize {
        self.in_situ.iter().map(|t| t.trace.actions.len()).sum::<usize>()
            + self.ex_situ.iter().map(|s| s.actions.len()).sum::<usize>()
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub latency: LatencyModel,
    pub flush: FlushPolicy,
    /// A passive peer joins once this many scripted actions have run.
    pub late_joiner_at: Option<usize>,
    pub storage: StorageConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            latency: LatencyModel::default(),
            flush: FlushPolicy::default(),
            late_joiner_at: None,
            storage: StorageConfig::default(),
        }
    }
}

pub const LATE_JOINER: &str = "late-joiner";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub peer: PeerId,
    pub role: PeerRole,
    pub connected: bool,
    pub hash: Option<Digest>,
    pub stats: ClientStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub room: RoomId,
    pub session_id: SessionId,
    pub last_seq: u64,
    pub server_hash: Digest,
    pub clients: Vec<ClientReport>,
    /// Every connected peer's replica hash equals the server hash.
    pub converged: bool,
    pub actions: usize,
    /// Sum of the two injected hop delays for each delivered relay message.
    pub transport_latency: LatencyStats,
    /// Emission to delivery, including batching and link queueing.
    pub observed_latency: LatencyStats,
    pub dropped_lossy: usize,
    pub relay_rejections: usize,
    pub fold_errors: usize,
    pub duration_ms: u64,
    pub session_dir: Option<PathBuf>,
}

enum Peer {
    In(InSituClient),
    Ex(ExSituClient),
    Passive(ClientCore),
}

impl Peer {
    fn core(&self) -> &ClientCore {
        match self {
            Peer::In(c) => &c.core,
            Peer::Ex(c) => &c.core,
            Peer::Passive(c) => c,
        }
    }

    fn core_mut(&mut self) -> &mut ClientCore {
        match self {
            Peer::In(c) => &mut c.core,
            Peer::Ex(c) => &mut c.core,
            Peer::Passive(c) => c,
        }
    }
}

struct Slot {
    peer: Peer,
    /// Bumped on every (re)connect; stale deliveries are discarded.
    generation: u64,
    connected: bool,
    flush_at: Option<u64>,
    tick_at: Option<u64>,
    uplink_free_at: u64,
    downlink_free_at: u64,
}

enum Ev {
    InSitu { client: usize, idx: usize },
    ExSitu { client: usize, idx: usize },
    Connect { client: usize, generation: u64, hop_us: u64 },
    ToServer { client: usize, generation: u64, bytes: Vec<u8>, hop_us: u64 },
    ToClient { client: usize, generation: u64, env: Arc<WireEnvelope>, transport_us: u64 },
    Leave { client: usize, hop_us: u64 },
    Flush { client: usize },
    Tick { client: usize },
}

/// The simulation world. Build with [`Sim::new`] and drive with [`Sim::run`].
pub struct Sim {
    scenario: Scenario,
    config: SimConfig,
    rng: ChaCha8Rng,
    room: Room,
    store: Option<SessionStore>,
    slots: Vec<Slot>,
    by_peer: BTreeMap<PeerId, usize>,
    queue: BinaryHeap<Reverse<(u64, u64, usize)>>,
    events: Vec<Option<Ev>>,
    next_id: u64,
    now_us: u64,
    actions_run: usize,
    transport: Vec<u64>,
    observed: Vec<u64>,
    dropped_lossy: usize,
    relay_rejections: usize,
    fold_errors: usize,
}

impl Sim {
    pub fn new(scenario: Scenario, config: SimConfig) -> Result<Self, SimError> {
        config.latency.validate()?;
        for t in &scenario.in_situ {
            t.validate()?;
        }
        let base = resolve_base(&config.storage, &scenario.room).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.latency.seed);
        let session = SessionId::generate(scenario.base_time, &mut rng);
        let store = open_session(&config.storage, &scenario.room, &session, &base)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let room = Room::new(scenario.room.clone(), session, base);

        let mut slots = Vec::new();
        for (i, t) in scenario.in_situ.iter().enumerate() {
            let c = InSituClient::new(scenario.room.clone(), t.clone(), config.flush, config.latency.seed ^ (i as u64 + 1));
            slots.push(Slot::new(Peer::In(c)));
        }
        for (i, s) in scenario.ex_situ.iter().enumerate() {
            let seed = config.latency.seed ^ ((i as u64 + 1) << 32);
            let c = ExSituClient::new(scenario.room.clone(), s.peer.clone(), config.flush, seed, scenario.site.clone());
            slots.push(Slot::new(Peer::Ex(c)));
        }
        if config.late_joiner_at.is_some() {
            let core = ClientCore::new(scenario.room.clone(), PeerId::new(LATE_JOINER), PeerRole::ExSitu, config.flush);
            slots.push(Slot::new(Peer::Passive(core)));
        }
        let mut by_peer = BTreeMap::new();
        for (i, s) in slots.iter().enumerate() {
            if by_peer.insert(s.peer.core().peer.clone(), i).is_some() {
                return Err(SimError::InvalidConfig(format!("duplicate peer {}", s.peer.core().peer)));
            }
        }
        if by_peer.keys().any(|p| p.as_str() == RELAY_PEER) {
            return Err(SimError::InvalidConfig(format!("peer id {RELAY_PEER} is reserved")));
        }

        Ok(Self {
            scenario,
            config,
            rng,
            room,
            store,
            slots,
            by_peer,
            queue: BinaryHeap::new(),
            events: Vec::new(),
            next_id: 0,
            now_us: 0,
            actions_run: 0,
            transport: Vec::new(),
            observed: Vec::new(),
            dropped_lossy: 0,
            relay_rejections: 0,
            fold_errors: 0,
        })
    }

    fn now_ms(&self) -> TimestampMs {
        self.scenario.base_time + self.now_us / 1000
    }

    fn schedule(&mut self, at_us: u64, ev: Ev) {
        let slot = self.events.len();
        self.events.push(Some(ev));
        self.queue.push(Reverse((at_us, self.next_id, slot)));
        self.next_id += 1;
    }

    fn hop(&mut self) -> u64 {
        self.config.latency.sample_hop_us(&mut self.rng)
    }

    /// Runs the scenario to quiescence.
    pub fn run(mut self) -> Result<SimReport, SimError> {
        let scripted: Vec<usize> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !matches!(s.peer, Peer::Passive(_)))
            .map(|(i, _)| i)
            .collect();
        for &i in &scripted {
            let hop = self.hop();
            self.schedule(hop, Ev::Connect { client: i, generation: 0, hop_us: hop });
            self.slots[i].connected = true;
        }
        for i in 0..self.scenario.in_situ.len() {
            if let Some(first) = self.scenario.in_situ[i].trace.actions.first() {
                self.schedule(first.at_ms * 1000, Ev::InSitu { client: i, idx: 0 });
            }
        }
        let offset = self.scenario.in_situ.len();
        for i in 0..self.scenario.ex_situ.len() {
            if let Some(first) = self.scenario.ex_situ[i].actions.first() {
                self.schedule(first.at_ms * 1000, Ev::ExSitu { client: offset + i, idx: 0 });
            }
        }
        if self.config.late_joiner_at == Some(0) {
            self.connect_late_joiner();
        }

        while let Some(Reverse((at, _, slot))) = self.queue.pop() {
            self.now_us = at;
            let ev = self.events[slot].take().expect("event runs once");
            self.handle(ev)?;
            if self.queue.is_empty() {
                self.drain_queues();
            }
        }
        self.finish()
    }

    fn count_action(&mut self) {
        self.actions_run += 1;
        if self.config.late_joiner_at == Some(self.actions_run) {
            self.connect_late_joiner();
        }
    }

    fn connect_late_joiner(&mut self) {
        let i = self.slots.len() - 1;
        if !self.slots[i].connected {
            self.slots[i].connected = true;
            let hop = self.hop();
            self.schedule(self.now_us + hop, Ev::Connect { client: i, generation: 0, hop_us: hop });
        }
    }

    /// Flushes whatever is still buffered once nothing else is pending.
    fn drain_queues(&mut self) {
        for i in 0..self.slots.len() {
            if self.slots[i].connected && self.slots[i].peer.core().is_joined() {
                let out = self.slots[i].peer.core_mut().flush_all();
                self.slots[i].flush_at = None;
                self.ship(i, out);
            }
        }
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::InSitu { client, idx } => {
                let trace = self.scenario.in_situ[client].clone();
                let action = &trace.trace.actions[idx].action;
                let now = self.now_ms();
                let Peer::In(c) = &mut self.slots[client].peer else { unreachable!() };
                let op = c.act(action, now)?;
                match op {
                    Some(LinkOp::Disconnect) => self.disconnect(client),
                    Some(LinkOp::Reconnect) => self.reconnect(client),
                    None => {}
                }
                if let Some(next) = trace.trace.actions.get(idx + 1) {
                    self.schedule(next.at_ms * 1000, Ev::InSitu { client, idx: idx + 1 });
                }
                self.after_action(client);
                self.count_action();
            }
            Ev::ExSitu { client, idx } => {
                let script = &self.scenario.ex_situ[client - self.scenario.in_situ.len()];
                let action = script.actions[idx].action.clone();
                let next = script.actions.get(idx + 1).map(|a| a.at_ms);
                let now = self.now_ms();
                let Peer::Ex(c) = &mut self.slots[client].peer else { unreachable!() };
                c.act(&action, now);
                if let Some(at) = next {
                    self.schedule(at * 1000, Ev::ExSitu { client, idx: idx + 1 });
                }
                self.after_action(client);
                self.count_action();
            }
            Ev::Connect { client, generation, hop_us } => {
                if self.slots[client].generation != generation || !self.slots[client].connected {
                    return Ok(());
                }
                let core = self.slots[client].peer.core();
                let (peer, role) = (core.peer.clone(), core.role);
                let now = self.now_ms();
                match self.room.join(peer, role, now) {
                    Ok(routed) => self.dispatch(routed, hop_us)?,
                    Err(e) => return Err(SimError::Protocol(format!("join refused: {e}"))),
                }
            }
            Ev::ToServer { client, generation, bytes, hop_us } => {
                if self.slots[client].generation != generation || !self.slots[client].connected {
                    return Ok(());
                }
                let env = decode(&bytes).map_err(|e| SimError::Protocol(e.to_string()))?;
                let sender = env.sender.clone();
                let now = self.now_ms();
                match self.room.route(env, now) {
                    Ok(routed) => self.dispatch(routed, hop_us)?,
                    Err(e) => {
                        self.relay_rejections += 1;
                        let notice = self.room.relay_envelope(now, Control::Error { message: e.to_string() });
                        self.send_down(self.by_peer[&sender], Arc::new(notice), hop_us);
                    }
                }
            }
            Ev::ToClient { client, generation, env, transport_us } => {
                if self.slots[client].generation != generation || !self.slots[client].connected {
                    return Ok(());
                }
                self.transport.push(transport_us);
                if env.sender.as_str() != RELAY_PEER {
                    let sent_us = env.sent_at.saturating_sub(self.scenario.base_time) * 1000;
                    self.observed.push(self.now_us.saturating_sub(sent_us));
                }
                let now = self.now_ms();
                let is_snapshot = matches!(&env.body, Message::Control { control: Control::Snapshot { .. } });
                match &mut self.slots[client].peer {
                    Peer::In(c) => {
                        c.core.receive(&env)?;
                        if is_snapshot {
                            c.on_snapshot(now)?;
                        }
                    }
                    Peer::Ex(c) => c.receive(&env)?,
                    Peer::Passive(c) => c.receive(&env)?,
                }
                self.after_action(client);
            }
            Ev::Leave { client, hop_us } => {
                let peer = self.slots[client].peer.core().peer.clone();
                let now = self.now_ms();
                if let Ok(routed) = self.room.leave(&peer, now) {
                    self.dispatch(routed, hop_us)?;
                }
            }
            Ev::Flush { client } => {
                self.slots[client].flush_at = None;
                let now = self.now_ms();
                let out = self.slots[client].peer.core_mut().poll_flush(now);
                self.ship(client, out);
                self.after_action(client);
            }
            Ev::Tick { client } => {
                let now = self.now_ms();
                if let Peer::In(c) = &mut self.slots[client].peer {
                    c.tick(now);
                }
                self.after_action(client);
            }
        }
        Ok(())
    }

    /// Post-step bookkeeping for one client: flush what is due and arm the
    /// next flush and timer deadlines.
    fn after_action(&mut self, client: usize) {
        let now = self.now_ms();
        let out = self.slots[client].peer.core_mut().poll_flush(now);
        self.ship(client, out);
        if let Some(deadline) = self.slots[client].peer.core().next_deadline() {
            let at = (deadline - self.scenario.base_time) * 1000;
            if self.slots[client].flush_at.is_none_or(|f| at < f) {
                self.slots[client].flush_at = Some(at);
                self.schedule(at.max(self.now_us), Ev::Flush { client });
            }
        }
        if let Peer::In(c) = &self.slots[client].peer {
            if let Some(deadline) = c.timer_deadline() {
                let at = (deadline - self.scenario.base_time) * 1000;
                if self.slots[client].tick_at != Some(at) {
                    self.slots[client].tick_at = Some(at);
                    self.schedule(at.max(self.now_us), Ev::Tick { client });
                }
            }
        }
    }

    fn ship(&mut self, client: usize, out: Vec<WireEnvelope>) {
        if !self.slots[client].connected {
            return;
        }
        for env in out {
            if !env.is_reliable() && self.config.latency.drops(&mut self.rng) {
                self.dropped_lossy += 1;
                continue;
            }
            let hop = self.hop();
            let at = self.uplink_slot(client, hop);
            let generation = self.slots[client].generation;
            self.schedule(at, Ev::ToServer {
                client,
                generation,
                bytes: encode(&env),
                hop_us: hop,
            });
        }
    }

    fn send_down(&mut self, client: usize, env: Arc<WireEnvelope>, hop_up_us: u64) {
        if !self.slots[client].connected {
            return;
        }
        if !env.is_reliable() && self.config.latency.drops(&mut self.rng) {
            self.dropped_lossy += 1;
            return;
        }
        let hop = self.hop();
        let slot = &mut self.slots[client];
        let at = (self.now_us + hop).max(slot.downlink_free_at);
        slot.downlink_free_at = at;
        let generation = slot.generation;
        self.schedule(at, Ev::ToClient {
            client,
            generation,
            env,
            transport_us: hop_up_us + hop,
        });
    }

    fn dispatch(&mut self, routed: Routed, hop_up_us: u64) -> Result<(), SimError> {
        if let Some(record) = &routed.record {
            if let Some(store) = &mut self.store {
                store.append(record).map_err(|e| SimError::Io("session log".into(), std::io::Error::other(e.to_string())))?;
            }
        }
        if routed.fold_error.is_some() {
            self.fold_errors += 1;
        }
        for o in routed.outbound {
            let client = self.by_peer[&o.to];
            self.send_down(client, o.envelope, hop_up_us);
        }
        Ok(())
    }

    fn disconnect(&mut self, client: usize) {
        let slot = &mut self.slots[client];
        if !slot.connected {
            return;
        }
        slot.connected = false;
        slot.generation += 1;
        slot.flush_at = None;
        slot.peer.core_mut().disconnected();
        let hop = self.hop();
        let at = self.uplink_slot(client, hop);
        self.schedule(at, Ev::Leave { client, hop_us: hop });
    }

    /// Next FIFO delivery time on the client's uplink.
    fn uplink_slot(&mut self, client: usize, hop: u64) -> u64 {
        let slot = &mut self.slots[client];
        let at = (self.now_us + hop).max(slot.uplink_free_at);
        slot.uplink_free_at = at;
        at
    }

    fn reconnect(&mut self, client: usize) {
        let slot = &mut self.slots[client];
        if slot.connected {
            return;
        }
        slot.connected = true;
        slot.generation += 1;
        let generation = slot.generation;
        let hop = self.hop();
        let at = self.uplink_slot(client, hop);
        self.schedule(at, Ev::Connect { client, generation, hop_us: hop });
    }

    fn finish(mut self) -> Result<SimReport, SimError> {
        let server_hash = self.room.room_hash();
        let clients: Vec<ClientReport> = self
            .slots
            .iter()
            .map(|s| {
                let core = s.peer.core();
                ClientReport {
                    peer: core.peer.clone(),
                    role: core.role,
                    connected: s.connected,
                    hash: core.hash(),
                    stats: core.stats.clone(),
                }
            })
            .collect();
        let converged = clients
            .iter()
            .filter(|c| c.connected)
            .all(|c| c.hash == Some(server_hash));
        let now = self.now_ms();
        let session_dir = match self.store.take() {
            Some(store) => Some(
                store
                    .close(self.room.id(), self.room.session_id(), self.room.state(), self.room.last_seq(), now)
                    .map_err(|e| SimError::Io("closing session".into(), std::io::Error::other(e.to_string())))?,
            ),
            None => None,
        };
        Ok(SimReport {
            room: self.room.id().clone(),
            session_id: self.room.session_id().clone(),
            last_seq: self.room.last_seq(),
            server_hash,
            clients,
            converged,
            actions: self.actions_run,
            transport_latency: LatencyStats::of_us(&self.transport),
            observed_latency: LatencyStats::of_us(&self.observed),
            dropped_lossy: self.dropped_lossy,
            relay_rejections: self.relay_rejections,
            fold_errors: self.fold_errors,
            duration_ms: self.now_us / 1000,
            session_dir,
        })
    }
}

impl Slot {
    fn new(peer: Peer) -> Self {
        Self {
            peer,
            generation: 0,
            connected: false,
            flush_at: None,
            tick_at: None,
            uplink_free_at: 0,
            downlink_free_at: 0,
        }
    }
}

/// Convenience wrapper around [`Sim::new`] and [`Sim::run`].
pub fn simulate(scenario: Scenario, config: SimConfig) -> Result<SimReport, SimError> {
    Sim::new(scenario, config)?.run()
}
