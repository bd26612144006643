//! `arco` command-line interface.

mod inspect;
mod simulate;

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use arco_core::canonical::Digest;
use arco_core::persistence::{replay_session, save_scene, SessionSummary};
use arco_relay::{Relay, RelayConfig, StorageConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use inspect::{inspect_session, Inspection};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "arco", version, about = "Shared-scene relay, simulator and session tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the relay server.
    Serve(ServeArgs),
    /// Drive scripted peers through a room and check they converge.
    Simulate(simulate::SimulateArgs),
    /// Write a synthetic in-situ trace (and editor scripts) to a directory.
    SynthTrace(simulate::SynthTraceArgs),
    /// Rebuild a recorded session from its log.
    Replay(ReplayArgs),
    /// Summarize a recorded session.
    Inspect(InspectArgs),
    /// Write the replayed scene and its assets to a directory.
    ExportScene(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ARCO_ADDR", default_value = "127.0.0.1:7878")]
    pub addr: SocketAddr,
    /// Directory for session logs and saved scenes. Rooms stay in memory without it.
    #[arg(long, env = "ARCO_PERSIST_DIR")]
    pub persist_dir: Option<PathBuf>,
    /// Scene for rooms with no earlier session (a scene.json or its directory).
    #[arg(long, env = "ARCO_BASE_SCENE")]
    pub base_scene: Option<PathBuf>,
    #[arg(long, env = "ARCO_FLUSH_WINDOW_MS", default_value_t = arco_core::protocol::DEFAULT_FLUSH_WINDOW_MS)]
    pub flush_window_ms: u64,
    /// Per-peer outbound queue limit, in messages.
    #[arg(long, env = "ARCO_QUEUE_CAP", default_value_t = arco_relay::DEFAULT_QUEUE_CAP)]
    pub queue_cap: usize,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, env = "ARCO_SESSION")]
    pub session: PathBuf,
    /// Expected room hash (hex). Exit 3 if the replay differs.
    #[arg(long, env = "ARCO_VERIFY_HASH")]
    pub verify_hash: Option<String>,
    /// Also save the replayed scene here.
    #[arg(long, env = "ARCO_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "ARCO_JSON")]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, env = "ARCO_SESSION")]
    pub session: PathBuf,
    #[arg(long, env = "ARCO_JSON")]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, env = "ARCO_SESSION")]
    pub session: PathBuf,
    #[arg(long, env = "ARCO_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "ARCO_JSON")]
    pub json: bool,
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Ok,
    /// A flag value that parsed but is unusable.
    Usage(String),
    VerificationFailed(String),
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match execute(cli) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Ok(Outcome::VerificationFailed(msg)) => {
            eprintln!("verification failed: {msg}");
            EXIT_VERIFY
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("ARCO_LOG").unwrap_or_else(|_| "warn".into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn execute(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate::simulate(a),
        Command::SynthTrace(a) => simulate::synth_trace(a),
        Command::Replay(a) => replay(a),
        Command::Inspect(a) => {
            let report = inspect_session(&a.session)?;
            if a.json {
                print_json(&report)?;
            } else {
                print!("{}", report.table());
            }
            Ok(Outcome::Ok)
        }
        Command::ExportScene(a) => export_scene(a),
    }
}

pub(crate) fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn serve(a: ServeArgs) -> anyhow::Result<Outcome> {
    let config = RelayConfig {
        storage: StorageConfig {
            persist_dir: a.persist_dir,
            base_scene: a.base_scene,
        },
        flush_window_ms: a.flush_window_ms,
        queue_cap: a.queue_cap,
    };
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        tracing::info!("relay listening on {}", listener.local_addr()?);
        eprintln!("listening on {}", listener.local_addr()?);
        arco_relay::serve(listener, Relay::new(config), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("relay server")
    })?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Serialize)]
struct ReplayReport {
    session: PathBuf,
    room_hash: Digest,
    last_seq: u64,
    rejected: usize,
    /// Hash recorded when the session closed, if it did.
    recorded_hash: Option<Digest>,
    verified: Option<bool>,
}

fn replay(a: ReplayArgs) -> anyhow::Result<Outcome> {
    let expected = match a.verify_hash.as_deref() {
        Some(h) => match Digest::from_hex(h.trim()) {
            Some(d) => Some(d),
            None => return Ok(Outcome::Usage(format!("--verify-hash {h:?} is not a 64-digit hex digest"))),
        },
        None => None,
    };
    let outcome = replay_session(&a.session).with_context(|| format!("replaying {}", a.session.display()))?;
    let room_hash = outcome.state.hash();
    let recorded_hash = SessionSummary::read(&a.session).ok().map(|s| s.room_hash);
    if let Some(out) = &a.out {
        save_scene(&outcome.state, out).with_context(|| format!("saving scene to {}", out.display()))?;
    }
    let report = ReplayReport {
        session: a.session.clone(),
        room_hash,
        last_seq: outcome.last_seq,
        rejected: outcome.rejected,
        recorded_hash,
        verified: expected.map(|e| e == room_hash),
    };
    if a.json {
        print_json(&report)?;
    } else {
        println!("room_hash {room_hash}");
        println!("last_seq  {}", report.last_seq);
        println!("rejected  {}", report.rejected);
        if let Some(h) = recorded_hash {
            println!("recorded  {h}");
        }
    }
    match expected {
        Some(e) if e != room_hash => Ok(Outcome::VerificationFailed(format!("replayed {room_hash}, expected {e}"))),
        _ => Ok(Outcome::Ok),
    }
}

#[derive(Debug, Serialize)]
struct ExportReport {
    out: PathBuf,
    room_hash: Digest,
    files: usize,
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|rd| {
            rd.flatten()
                .map(|e| {
                    let p = e.path();
                    if p.is_dir() {
                        count_files(&p)
                    } else {
                        1
                    }
                })
                .sum()
        })
        .unwrap_or(0)
}

fn export_scene(a: ExportArgs) -> anyhow::Result<Outcome> {
    let outcome = replay_session(&a.session).with_context(|| format!("replaying {}", a.session.display()))?;
    save_scene(&outcome.state, &a.out).with_context(|| format!("saving scene to {}", a.out.display()))?;
    let report = ExportReport {
        room_hash: outcome.state.hash(),
        files: count_files(&a.out),
        out: a.out,
    };
    if a.json {
        print_json(&report)?;
    } else {
        println!("exported {} files to {} (room_hash {})", report.files, report.out.display(), report.room_hash);
    }
    Ok(Outcome::Ok)
}
