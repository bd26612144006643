use std::path::{Path, PathBuf};

use arco_core::ids::{RoomId, SessionId, TimestampMs};
use arco_core::persistence::{
    list_sessions, load_scene, save_scene, LogRecord, PersistError, SessionLogWriter, SessionSummary, BASE_DIR,
    LOG_FILE, SCENE_FILE,
};
use arco_core::state::RoomState;

/// Where a room's sessions live on disk, and the scene each starts from.
#[derive(Clone, Debug, Default)]
pub struct StorageConfig {
    /// Root holding one directory per room. `None` keeps rooms in memory.
    pub persist_dir: Option<PathBuf>,
    /// Scene loaded for rooms with no prior session: a directory holding
    /// `scene.json`, or the file itself.
    pub base_scene: Option<PathBuf>,
}

/// Durable side of a live session.
pub struct SessionStore {
    dir: PathBuf,
    writer: SessionLogWriter,
}

impl SessionStore {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<(), PersistError> {
        self.writer.append(record)
    }

    /// Saves the final scene and summary.
    pub fn close(self, room: &RoomId, session: &SessionId, state: &RoomState, last_seq: u64, now: TimestampMs) -> Result<PathBuf, PersistError> {
        save_scene(state, &self.dir)?;
        SessionSummary {
            room: room.clone(),
            session_id: session.clone(),
            last_seq,
            room_hash: state.hash(),
            closed_at: now,
        }
        .write(&self.dir)?;
        Ok(self.dir)
    }
}

fn load_base_path(p: &Path) -> Result<RoomState, PersistError> {
    if p.file_name().map(|n| n == SCENE_FILE).unwrap_or(false) {
        load_scene(p.parent().unwrap_or(Path::new(".")))
    } else {
        load_scene(p)
    }
}

/// The base a new session of `room` starts from: the latest prior session's
/// saved scene, else the configured base scene, else empty.
pub fn resolve_base(config: &StorageConfig, room: &RoomId) -> Result<RoomState, PersistError> {
    if let Some(root) = &config.persist_dir {
        // Closed sessions only; ids from the same second order by close time.
        let latest = list_sessions(&root.join(room.as_str()))?
            .into_iter()
            .filter_map(|d| SessionSummary::read(&d).ok().map(|s| (s.closed_at, d)))
            .filter(|(_, d)| d.join(SCENE_FILE).exists())
            .max();
        if let Some((_, dir)) = latest {
            return load_scene(&dir);
        }
    }
    match &config.base_scene {
        Some(p) => load_base_path(p),
        None => Ok(RoomState::default()),
    }
}

/// Creates the session directory, records its base scene and opens the log.
pub fn open_session(config: &StorageConfig, room: &RoomId, session: &SessionId, base: &RoomState) -> Result<Option<SessionStore>, PersistError> {
    let Some(root) = &config.persist_dir else {
        return Ok(None);
    };
    let dir = root.join(room.as_str()).join(session.as_str());
    save_scene(base, &dir.join(BASE_DIR))?;
    let writer = SessionLogWriter::create(&dir.join(LOG_FILE))?;
    Ok(Some(SessionStore { dir, writer }))
}

/// Room ids become directory names.
pub fn valid_room_id(r: &str) -> bool {
    SessionId::new(r).is_path_safe()
}
