use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use arco_core::ids::RoomId;
use arco_core::protocol::FlushPolicy;
use arco_relay::{valid_room_id, Relay, RelayConfig, StorageConfig};
use arco_sim::harness::{simulate as run_virtual, ExScript, Scenario, SimConfig};
use arco_sim::latency::LatencyModel;
use arco_sim::live::{run_live, LiveConfig};
use arco_sim::scenario::{synth_scenario, ScenarioOptions};
use arco_sim::trace::LoadedTrace;
use clap::Args;

use crate::{print_json, runtime, Outcome};

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).multiple(true).args(["trace", "synthetic"]))]
pub struct SimulateArgs {
    /// In-situ trace (trace.json or its directory). Repeat for more devices.
    #[arg(long, env = "ARCO_TRACE", value_delimiter = ',')]
    pub trace: Vec<PathBuf>,
    /// Ex-situ editor script (JSON). Repeat for more editors.
    #[arg(long, env = "ARCO_EDITOR_SCRIPT", value_delimiter = ',')]
    pub editor_script: Vec<PathBuf>,
    /// Generate a synthetic session with this many actions instead of reading traces.
    #[arg(long, env = "ARCO_SYNTHETIC", conflicts_with = "trace")]
    pub synthetic: Option<usize>,
    /// Ex-situ editors in a synthetic session.
    #[arg(long, env = "ARCO_EDITORS", default_value_t = 1)]
    pub editors: usize,
    /// In-situ devices in a synthetic session.
    #[arg(long, env = "ARCO_DEVICES", default_value_t = 1)]
    pub devices: usize,
    #[arg(long, env = "ARCO_ROOM")]
    pub room: String,
    /// End-to-end delay range in milliseconds, `LO:HI`.
    #[arg(long, env = "ARCO_LATENCY", default_value = "35:120")]
    pub latency: String,
    #[arg(long, env = "ARCO_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Per-hop drop probability for lossy-channel messages.
    #[arg(long, env = "ARCO_DROP", default_value_t = 0.0)]
    pub drop: f64,
    /// Run on a simulated clock with an in-process relay (deterministic).
    #[arg(long, env = "ARCO_VIRTUAL_CLOCK")]
    pub virtual_clock: bool,
    /// Relay to connect to in wall-clock mode, e.g. `ws://127.0.0.1:7878`.
    /// Without it an in-process relay is started.
    #[arg(long, env = "ARCO_RELAY", conflicts_with = "virtual_clock")]
    pub relay: Option<String>,
    /// Record the session here (in-process relay only).
    #[arg(long, env = "ARCO_PERSIST_DIR")]
    pub persist_dir: Option<PathBuf>,
    #[arg(long, env = "ARCO_BASE_SCENE")]
    pub base_scene: Option<PathBuf>,
    /// Add a passive peer after this many scripted actions (virtual clock).
    #[arg(long, env = "ARCO_LATE_JOINER_AT")]
    pub late_joiner_at: Option<usize>,
    #[arg(long, env = "ARCO_FLUSH_WINDOW_MS", default_value_t = arco_core::protocol::DEFAULT_FLUSH_WINDOW_MS)]
    pub flush_window_ms: u64,
    #[arg(long, env = "ARCO_JSON")]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthTraceArgs {
    #[arg(long, env = "ARCO_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "ARCO_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Actions across the device and editors.
    #[arg(long, env = "ARCO_ACTIONS", default_value_t = 200)]
    pub actions: usize,
    #[arg(long, env = "ARCO_EDITORS", default_value_t = 1)]
    pub editors: usize,
    /// Leave the alignment unconfirmed.
    #[arg(long, env = "ARCO_NO_CONFIRM")]
    pub no_confirm: bool,
    #[arg(long, env = "ARCO_RECONNECTS")]
    pub reconnects: bool,
}

fn trace_file(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("trace.json")
    } else {
        p.to_path_buf()
    }
}

fn scenario(a: &SimulateArgs, room: RoomId) -> anyhow::Result<Scenario> {
    if let Some(actions) = a.synthetic {
        return Ok(synth_scenario(room, &ScenarioOptions {
            seed: a.seed,
            actions,
            in_situ_peers: a.devices,
            ex_situ_peers: a.editors,
            ..Default::default()
        }));
    }
    let mut in_situ = Vec::new();
    for p in &a.trace {
        let file = trace_file(p);
        let t = LoadedTrace::load(&file).with_context(|| format!("loading {}", file.display()))?;
        in_situ.push(Arc::new(t));
    }
    let mut ex_situ = Vec::new();
    for p in &a.editor_script {
        let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let script: ExScript = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?;
        ex_situ.push(script);
    }
    let first = in_situ.first().expect("trace is required without --synthetic");
    let site = first
        .trace
        .header
        .location_mesh
        .as_ref()
        .and_then(|m| first.assets.meshes.get(m).cloned());
    Ok(Scenario {
        room,
        base_time: first.trace.header.base_time,
        in_situ,
        ex_situ,
        site,
    })
}

pub fn simulate(a: SimulateArgs) -> anyhow::Result<Outcome> {
    if !valid_room_id(&a.room) {
        return Ok(Outcome::Usage(format!("invalid room id {:?}", a.room)));
    }
    let (lo_ms, hi_ms) = match LatencyModel::parse_range(&a.latency) {
        Ok(r) => r,
        Err(e) => return Ok(Outcome::Usage(e.to_string())),
    };
    let latency = LatencyModel {
        lo_ms,
        hi_ms,
        seed: a.seed,
        drop_rate: a.drop,
    };
    if let Err(e) = latency.validate() {
        return Ok(Outcome::Usage(e.to_string()));
    }
    let flush = FlushPolicy {
        window_ms: a.flush_window_ms,
        ..Default::default()
    };
    let storage = StorageConfig {
        persist_dir: a.persist_dir.clone(),
        base_scene: a.base_scene.clone(),
    };
    let scenario = scenario(&a, RoomId::new(a.room.clone()))?;

    if a.virtual_clock {
        let report = run_virtual(scenario, SimConfig {
            latency,
            flush,
            late_joiner_at: a.late_joiner_at,
            storage,
        })?;
        if a.json {
            print_json(&report)?;
        } else {
            println!("session     {}", report.session_id);
            println!("last_seq    {}", report.last_seq);
            println!("server_hash {}", report.server_hash);
            for c in &report.clients {
                let hash = c.hash.map(|h| h.to_string()).unwrap_or_else(|| "-".into());
                println!("peer        {} ({}) {}", c.peer, c.role.as_str(), hash);
            }
            let t = &report.transport_latency;
            println!("latency     min {:.3} ms  mean {:.3} ms  max {:.3} ms  (n={})", t.min_ms, t.mean_ms, t.max_ms, t.count);
            println!("dropped     {}", report.dropped_lossy);
            if let Some(d) = &report.session_dir {
                println!("recorded    {}", d.display());
            }
            println!("converged   {}", report.converged);
        }
        return Ok(if report.converged {
            Outcome::Ok
        } else {
            Outcome::VerificationFailed("replica hashes differ from the relay".into())
        });
    }

    let report = runtime()?.block_on(async move {
        let (url, server) = match &a.relay {
            Some(url) => (url.clone(), None),
            None => {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
                let addr = listener.local_addr()?;
                let relay = Relay::new(RelayConfig {
                    storage,
                    flush_window_ms: flush.window_ms,
                    ..Default::default()
                });
                let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
                let task = tokio::spawn(arco_relay::serve(listener, relay, async {
                    let _ = stopped.await;
                }));
                (format!("ws://{addr}"), Some((stop, task)))
            }
        };
        let report = run_live(scenario, LiveConfig {
            url,
            latency,
            flush,
            settle: Duration::from_millis(300),
            timeout: Duration::from_secs(60),
        })
        .await;
        if let Some((stop, task)) = server {
            let _ = stop.send(());
            task.await??;
        }
        anyhow::Ok(report?)
    })?;
    if a.json {
        print_json(&report)?;
    } else {
        for p in &report.peers {
            let hash = p.hash.map(|h| h.to_string()).unwrap_or_else(|| "-".into());
            println!("peer        {} ({}) as_of {} {} {}", p.peer, p.role.as_str(), p.as_of, hash, if p.matched { "ok" } else { "MISMATCH" });
        }
        println!("converged   {}", report.converged);
    }
    Ok(if report.converged {
        Outcome::Ok
    } else {
        Outcome::VerificationFailed("replica hashes differ from the relay snapshot".into())
    })
}

pub fn synth_trace(a: SynthTraceArgs) -> anyhow::Result<Outcome> {
    let scenario = synth_scenario(RoomId::new("synthetic"), &ScenarioOptions {
        seed: a.seed,
        actions: a.actions,
        ex_situ_peers: a.editors,
        confirm: !a.no_confirm,
        reconnects: a.reconnects,
        ..Default::default()
    });
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let trace = scenario.in_situ[0].save(&a.out)?;
    println!("{}", trace.display());
    for script in &scenario.ex_situ {
        let path = a.out.join(format!("{}.json", script.peer));
        let mut json = serde_json::to_vec_pretty(script)?;
        json.push(b'\n');
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(Outcome::Ok)
}
