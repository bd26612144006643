//! Session logs, deterministic replay and the on-disk scene format.
//!
//! A room's persist root holds one directory per session:
//!
//! ```text
//! {root}/{room}/{session_id}/
//!     session.log      one canonical JSON record per line
//!     base/            scene the session started from
//!     scene.json       final scene (plus per-session capture directories)
//!     summary.json     final sequence number and room hash
//! ```

mod log;
mod replay;
mod scene_file;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use log::{load_log, LoadedLog, LogRecord, SessionLogWriter, LOG_FILE};
pub use replay::{replay, replay_session, ReplayOutcome};
pub use scene_file::{load_scene, save_scene, SCENE_FILE, SCHEMA_VERSION};

pub const BASE_DIR: &str = "base";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u64 },
    #[error("invalid scene file {path}: {reason}")]
    InvalidScene { path: PathBuf, reason: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Written when a session is closed.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SessionSummary {
    pub room: crate::ids::RoomId,
    pub session_id: crate::ids::SessionId,
    pub last_seq: u64,
    pub room_hash: crate::canonical::Digest,
    pub closed_at: crate::ids::TimestampMs,
}

impl SessionSummary {
    pub fn write(&self, session_dir: &Path) -> Result<(), PersistError> {
        let path = session_dir.join(SUMMARY_FILE);
        let mut bytes = crate::canonical::to_vec(self);
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(io_err(&path))
    }

    pub fn read(session_dir: &Path) -> Result<Self, PersistError> {
        let path = session_dir.join(SUMMARY_FILE);
        let text = std::fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&text).map_err(|e| PersistError::InvalidScene {
            path,
            reason: e.to_string(),
        })
    }
}

/// Session directories of a room, oldest first (ids sort by time).
pub fn list_sessions(room_dir: &Path) -> Result<Vec<PathBuf>, PersistError> {
    if !room_dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(room_dir)
        .map_err(io_err(room_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(LOG_FILE).exists())
        .collect();
    out.sort();
    Ok(out)
}
