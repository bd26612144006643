use std::path::Path;

use super::{load_log, load_scene, LogRecord, PersistError, BASE_DIR, LOG_FILE};
use crate::ids::SessionId;
use crate::state::RoomState;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    pub state: RoomState,
    pub last_seq: u64,
    /// Records whose payload the fold rejected (also rejected live).
    pub rejected: usize,
}

/// Folds logged records over `base`, in log order.
pub fn replay(records: &[LogRecord], base: RoomState, session: &SessionId) -> ReplayOutcome {
    let mut state = base;
    let mut rejected = 0;
    let mut last_seq = 0;
    for r in records {
        if state.fold(&r.envelope, session).is_err() {
            rejected += 1;
        }
        last_seq = r.seq();
    }
    ReplayOutcome {
        state,
        last_seq,
        rejected,
    }
}

/// Replays a persisted session directory over its recorded base scene.
pub fn replay_session(session_dir: &Path) -> Result<ReplayOutcome, PersistError> {
    let session = session_id_of(session_dir);
    let base_dir = session_dir.join(BASE_DIR);
    let base = if base_dir.join(super::SCENE_FILE).exists() {
        load_scene(&base_dir)?
    } else {
        RoomState::default()
    };
    let records = load_log(&session_dir.join(LOG_FILE))?.into_result()?;
    Ok(replay(&records, base, &session))
}

pub(crate) fn session_id_of(dir: &Path) -> SessionId {
    SessionId::new(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
}
