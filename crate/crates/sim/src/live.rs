//! Wall-clock runner: drives the same scripted peers against a running relay
//! over WebSockets, with injected per-hop delay.

use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use arco_core::canonical::Digest;
use arco_core::ids::{PeerId, PeerRole, RoomId, TimestampMs};
use arco_core::protocol::{decode, encode, Control, FlushPolicy, Message, WireEnvelope};
use arco_core::state::Replica;
use futures::{SinkExt, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, Barrier};
use tokio::time::{sleep_until, timeout, Instant};
use tokio_tungstenite::tungstenite::Message as Ws;

use crate::client::{ClientCore, ClientStats, ExAction, ExSituClient, InSituClient, LinkOp};
use crate::harness::Scenario;
use crate::latency::{LatencyModel, LatencyStats};
use crate::trace::Action;
use crate::SimError;

#[derive(Clone, Debug)]
pub struct LiveConfig {
    /// Relay base URL, e.g. `ws://127.0.0.1:7878`.
    pub url: String,
    pub latency: LatencyModel,
    pub flush: FlushPolicy,
    /// Quiet period after every peer finished before hashes are compared.
    pub settle: Duration,
    /// Upper bound on the whole run after the last scripted action.
    pub timeout: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LivePeerReport {
    pub peer: PeerId,
    pub role: PeerRole,
    pub hash: Option<Digest>,
    pub server_hash: Option<Digest>,
    pub as_of: u64,
    pub matched: bool,
    pub stats: ClientStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveReport {
    pub room: RoomId,
    pub peers: Vec<LivePeerReport>,
    pub converged: bool,
    /// Injected relay→peer hop delays.
    pub downlink_latency: LatencyStats,
}

fn wall_ms() -> TimestampMs {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

enum Driver {
    In(InSituClient),
    Ex(ExSituClient),
}

enum Step {
    In(Action),
    Ex(ExAction),
}

impl Driver {
    fn core(&self) -> &ClientCore {
        match self {
            Driver::In(c) => &c.core,
            Driver::Ex(c) => &c.core,
        }
    }

    fn core_mut(&mut self) -> &mut ClientCore {
        match self {
            Driver::In(c) => &mut c.core,
            Driver::Ex(c) => &mut c.core,
        }
    }

    fn step(&mut self, step: &Step, now: TimestampMs) -> Result<Option<LinkOp>, SimError> {
        match (self, step) {
            (Driver::In(c), Step::In(a)) => c.act(a, now),
            (Driver::Ex(c), Step::Ex(a)) => {
                c.act(a, now);
                Ok(None)
            }
            _ => unreachable!("steps match their driver"),
        }
    }

    fn receive(&mut self, env: &WireEnvelope, now: TimestampMs) -> Result<(), SimError> {
        let is_snapshot = env.server_seq.is_none()
            && matches!(&env.body, Message::Control { control: Control::Snapshot { .. } });
        match self {
            Driver::In(c) => {
                c.core.receive(env)?;
                if is_snapshot {
                    c.on_snapshot(now)?;
                }
                Ok(())
            }
            Driver::Ex(c) => c.receive(env),
        }
    }

    fn timer_deadline(&self) -> Option<TimestampMs> {
        match self {
            Driver::In(c) => c.timer_deadline(),
            Driver::Ex(_) => None,
        }
    }

    fn tick(&mut self, now: TimestampMs) {
        if let Driver::In(c) = self {
            c.tick(now);
        }
    }
}

/// One WebSocket connection with delayed, FIFO delivery in both directions.
struct Link {
    out: mpsc::UnboundedSender<(Instant, Vec<u8>)>,
    inbound: mpsc::UnboundedReceiver<WireEnvelope>,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

struct Net {
    latency: LatencyModel,
    rng: Mutex<ChaCha8Rng>,
    samples: Mutex<Vec<u64>>,
}

impl Net {
    fn hop(&self) -> u64 {
        self.latency.sample_hop_us(&mut *self.rng.lock().expect("rng lock"))
    }

    fn drops(&self) -> bool {
        self.latency.drops(&mut *self.rng.lock().expect("rng lock"))
    }
}

async fn open_link(url: &str, room: &RoomId, peer: &PeerId, role: PeerRole, net: Arc<Net>) -> Result<Link, SimError> {
    let url = format!("{url}/ws/{room}?peer={peer}&role={}", role.as_str());
    let (ws, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .map_err(|e| SimError::ConnectionLost(format!("{url}: {e}")))?;
    let (mut sink, mut stream) = ws.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<(Instant, Vec<u8>)>();
    let (in_tx, in_rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(async move {
        while let Some((due, bytes)) = out_rx.recv().await {
            sleep_until(due).await;
            let text = String::from_utf8(bytes).expect("canonical JSON is UTF-8");
            if sink.send(Ws::Text(text.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });
    let (delay_tx, mut delay_rx) = mpsc::unbounded_channel::<(Instant, WireEnvelope)>();
    let reader_net = net.clone();
    let reader = tokio::spawn(async move {
        let mut free_at = Instant::now();
        while let Some(Ok(msg)) = stream.next().await {
            let Ws::Text(t) = msg else { continue };
            let Ok(env) = decode(t.as_bytes()) else { continue };
            if !env.is_reliable() && reader_net.drops() {
                continue;
            }
            let hop = reader_net.hop();
            reader_net.samples.lock().expect("samples lock").push(hop);
            free_at = free_at.max(Instant::now() + Duration::from_micros(hop));
            if delay_tx.send((free_at, env)).is_err() {
                return;
            }
        }
    });
    let delayer = tokio::spawn(async move {
        while let Some((due, env)) = delay_rx.recv().await {
            sleep_until(due).await;
            if in_tx.send(env).is_err() {
                return;
            }
        }
    });
    Ok(Link {
        out: out_tx,
        inbound: in_rx,
        tasks: vec![writer, reader, delayer],
    })
}

impl Link {
    fn close(self) {
        for t in self.tasks {
            t.abort();
        }
    }
}

struct PeerRun {
    driver: Driver,
    steps: Vec<(u64, Step)>,
    room: RoomId,
    url: String,
    net: Arc<Net>,
    started: Instant,
    started_ms: TimestampMs,
    uplink_free_at: Instant,
}

impl PeerRun {
    fn instant_of(&self, ms: TimestampMs) -> Instant {
        self.started + Duration::from_millis(ms.saturating_sub(self.started_ms))
    }

    fn ship(&mut self, link: &Link, out: Vec<WireEnvelope>) {
        for env in out {
            if !env.is_reliable() && self.net.drops() {
                continue;
            }
            let hop = Duration::from_micros(self.net.hop());
            self.uplink_free_at = self.uplink_free_at.max(Instant::now() + hop);
            let _ = link.out.send((self.uplink_free_at, encode(&env)));
        }
    }

    fn flush_due(&mut self, link: &Link) {
        let out = self.driver.core_mut().poll_flush(wall_ms());
        self.ship(link, out);
    }

    async fn connect(&self) -> Result<Link, SimError> {
        let core = self.driver.core();
        open_link(&self.url, &self.room, &core.peer, core.role, self.net.clone()).await
    }

    async fn run(mut self, barrier: Arc<Barrier>, config: LiveConfig) -> Result<LivePeerReport, SimError> {
        let mut link = Some(self.connect().await?);
        let mut next = 0;
        while next < self.steps.len() {
            let mut wake = self.instant_of(self.started_ms + self.steps[next].0);
            for d in [self.driver.core().next_deadline(), self.driver.timer_deadline()].into_iter().flatten() {
                wake = wake.min(self.instant_of(d));
            }
            let received = match link.as_mut() {
                Some(l) => tokio::select! {
                    _ = sleep_until(wake) => None,
                    env = l.inbound.recv() => Some(env.ok_or_else(|| SimError::ConnectionLost(self.driver.core().peer.to_string()))?),
                },
                None => {
                    sleep_until(wake).await;
                    None
                }
            };
            let now = wall_ms();
            if let Some(env) = received {
                self.driver.receive(&env, now)?;
            }
            self.driver.tick(now);
            while next < self.steps.len() && Instant::now() >= self.instant_of(self.started_ms + self.steps[next].0) {
                let op = self.driver.step(&self.steps[next].1, wall_ms())?;
                next += 1;
                match op {
                    Some(LinkOp::Disconnect) => {
                        if let Some(l) = link.take() {
                            l.close();
                        }
                        self.driver.core_mut().disconnected();
                    }
                    Some(LinkOp::Reconnect) if link.is_none() => {
                        // Give the relay time to notice the old socket closed.
                        tokio::time::sleep(Duration::from_millis(50)).await;
                        link = Some(self.connect().await?);
                    }
                    _ => {}
                }
            }
            if let Some(l) = &link {
                self.flush_due(l);
            }
        }
        let link = match link {
            Some(l) => l,
            None => self.connect().await?,
        };
        let out = self.driver.core_mut().flush_all();
        self.ship(&link, out);
        let mut link = link;

        // Keep reading while the others finish.
        let deadline = Instant::now() + config.timeout;
        let wait = barrier.wait();
        tokio::pin!(wait);
        loop {
            tokio::select! {
                _ = &mut wait => break,
                env = link.inbound.recv() => {
                    let env = env.ok_or_else(|| SimError::ConnectionLost(self.driver.core().peer.to_string()))?;
                    self.driver.receive(&env, wall_ms())?;
                    self.flush_due(&link);
                }
                _ = sleep_until(deadline) => return Err(SimError::ConnectionLost("peers did not finish in time".into())),
            }
        }
        let settle_until = Instant::now() + config.settle;
        loop {
            tokio::select! {
                _ = sleep_until(settle_until) => break,
                env = link.inbound.recv() => {
                    let env = env.ok_or_else(|| SimError::ConnectionLost(self.driver.core().peer.to_string()))?;
                    self.driver.receive(&env, wall_ms())?;
                }
            }
        }

        // Ask for the authoritative state and compare at the same sequence.
        let mut attempts = 0;
        loop {
            attempts += 1;
            let core = self.driver.core_mut();
            core.emit(Message::Control { control: Control::SnapshotRequest }, wall_ms());
            let out = core.flush_all();
            self.ship(&link, out);
            let snapshot = loop {
                let env = timeout(config.timeout, link.inbound.recv())
                    .await
                    .map_err(|_| SimError::ConnectionLost("no snapshot reply".into()))?
                    .ok_or_else(|| SimError::ConnectionLost(self.driver.core().peer.to_string()))?;
                match &env.body {
                    Message::Control { control: Control::Snapshot { snapshot } } if env.server_seq.is_none() => break snapshot.clone(),
                    _ => self.driver.receive(&env, wall_ms())?,
                }
            };
            let server = Replica::from_snapshot(&snapshot);
            let core = self.driver.core();
            let local = core.replica();
            let as_of = local.map(|r| r.as_of).unwrap_or(0);
            if as_of == server.as_of || attempts >= 5 {
                let hash = core.hash();
                let server_hash = Some(server.hash());
                let report = LivePeerReport {
                    peer: core.peer.clone(),
                    role: core.role,
                    matched: hash == server_hash && as_of == server.as_of,
                    hash,
                    server_hash,
                    as_of,
                    stats: core.stats.clone(),
                };
                link.close();
                return Ok(report);
            }
            tokio::time::sleep(config.settle).await;
        }
    }
}

/// Runs `scenario` against the relay at `config.url` in real time.
pub async fn run_live(scenario: Scenario, config: LiveConfig) -> Result<LiveReport, SimError> {
    config.latency.validate()?;
    let net = Arc::new(Net {
        latency: config.latency,
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.latency.seed)),
        samples: Mutex::new(Vec::new()),
    });
    let started = Instant::now();
    let started_ms = wall_ms();
    let mut runs = Vec::new();
    for (i, t) in scenario.in_situ.iter().enumerate() {
        t.validate()?;
        let driver = Driver::In(InSituClient::new(scenario.room.clone(), t.clone(), config.flush, config.latency.seed ^ (i as u64 + 1)));
        let steps = t.trace.actions.iter().map(|a| (a.at_ms, Step::In(a.action.clone()))).collect();
        runs.push((driver, steps));
    }
    for (i, s) in scenario.ex_situ.iter().enumerate() {
        let seed = config.latency.seed ^ ((i as u64 + 1) << 32);
        let driver = Driver::Ex(ExSituClient::new(scenario.room.clone(), s.peer.clone(), config.flush, seed, scenario.site.clone()));
        let steps = s.actions.iter().map(|a| (a.at_ms, Step::Ex(a.action.clone()))).collect();
        runs.push((driver, steps));
    }
    let barrier = Arc::new(Barrier::new(runs.len()));
    let mut handles = Vec::new();
    for (driver, steps) in runs {
        let run = PeerRun {
            driver,
            steps,
            room: scenario.room.clone(),
            url: config.url.trim_end_matches('/').to_owned(),
            net: net.clone(),
            started,
            started_ms,
            uplink_free_at: started,
        };
        handles.push(tokio::spawn(run.run(barrier.clone(), config.clone())));
    }
    let mut peers = Vec::new();
    for h in handles {
        let report = h.await.map_err(|e| SimError::ConnectionLost(e.to_string()))??;
        peers.push(report);
    }
    let converged = !peers.is_empty() && peers.iter().all(|p| p.matched);
    let samples = net.samples.lock().expect("samples lock").clone();
    Ok(LiveReport {
        room: scenario.room,
        peers,
        converged,
        downlink_latency: LatencyStats::of_us(&samples),
    })
}
