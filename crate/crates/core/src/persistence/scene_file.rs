use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, PersistError};
use crate::annotation::{Annotation, Marker};
use crate::canonical;
use crate::capture::{read_ply, write_ply, BlockKey, MeshBlockSet, PointCloud};
use crate::geometry::{Pose, TriangleMesh};
use crate::ids::{CaptureId, PeerId, ScreenshotId, SessionId, TimestampMs};
use crate::localization::LocalizationPhase;
use crate::protocol::Screenshot;
use crate::scene::SceneState;
use crate::state::{MeshCapture, RoomState};

pub const SCENE_FILE: &str = "scene.json";
pub const SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    schema_version: u64,
    location_mesh: Option<String>,
    scene: SceneState,
    localization: BTreeMap<PeerId, LocalizationPhase>,
    sessions: BTreeMap<SessionId, SessionGroup>,
}

#[derive(Default, Serialize, Deserialize)]
struct SessionGroup {
    annotations: Vec<Annotation>,
    markers: Vec<Marker>,
    clouds: Vec<CloudEntry>,
    meshes: Vec<MeshEntry>,
    screenshots: Vec<ScreenshotEntry>,
}

#[derive(Serialize, Deserialize)]
struct CloudEntry {
    capture_id: CaptureId,
    created_at: TimestampMs,
    source_pose: Pose,
    point_count: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct MeshEntry {
    capture_id: CaptureId,
    block_size: f64,
    stopped: bool,
    blocks: Vec<BlockKey>,
    dir: String,
}

#[derive(Serialize, Deserialize)]
struct ScreenshotEntry {
    id: ScreenshotId,
    peer: PeerId,
    taken_by: PeerId,
    pose: Pose,
    taken_at: TimestampMs,
    file: String,
}

/// Writes `scene.json` plus one directory per session holding that
/// session's capture geometry (PLY clouds, OBJ mesh blocks) and screenshot
/// images. Output bytes depend only on `state`.
pub fn save_scene(state: &RoomState, dir: &Path) -> Result<(), PersistError> {
    let mut sessions: BTreeMap<SessionId, SessionGroup> = BTreeMap::new();
    for s in state.sessions() {
        if !s.is_path_safe() {
            return Err(PersistError::InvalidScene {
                path: dir.to_path_buf(),
                reason: format!("session id {:?} is not a valid directory name", s.as_str()),
            });
        }
    }
    let write = |rel: &str, bytes: &[u8]| -> Result<(), PersistError> {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))
    };

    for a in state.annotations.values() {
        sessions.entry(a.session_id.clone()).or_default().annotations.push(a.clone());
    }
    for m in state.markers.values() {
        sessions.entry(m.session_id.clone()).or_default().markers.push(m.clone());
    }
    for c in state.clouds.values() {
        let file = format!("{}/captures/{}.ply", c.session_id.as_str(), c.capture_id);
        write(&file, write_ply(&c.points, &c.colors).as_bytes())?;
        sessions.entry(c.session_id.clone()).or_default().clouds.push(CloudEntry {
            capture_id: c.capture_id,
            created_at: c.created_at,
            source_pose: c.source_pose,
            point_count: c.points.len(),
            file,
        });
    }
    for m in state.meshes.values() {
        let set = &m.blocks;
        let rel = format!("{}/captures/{}", set.session_id.as_str(), set.capture_id);
        for (key, mesh) in &set.blocks {
            write(&format!("{rel}/{}", key.obj_file_name()), mesh.to_obj().as_bytes())?;
        }
        sessions.entry(set.session_id.clone()).or_default().meshes.push(MeshEntry {
            capture_id: set.capture_id,
            block_size: set.block_size,
            stopped: m.stopped,
            blocks: set.blocks.keys().copied().collect(),
            dir: rel,
        });
    }
    for s in state.screenshots.values() {
        let file = format!("{}/screenshots/{}.bin", s.session_id.as_str(), s.id);
        write(&file, &s.image)?;
        sessions.entry(s.session_id.clone()).or_default().screenshots.push(ScreenshotEntry {
            id: s.id,
            peer: s.peer.clone(),
            taken_by: s.taken_by.clone(),
            pose: s.pose,
            taken_at: s.taken_at,
            file,
        });
    }

    let doc = SceneDoc {
        schema_version: SCHEMA_VERSION,
        location_mesh: state.location_mesh.clone(),
        scene: state.scene.clone(),
        localization: state.localization.clone(),
        sessions,
    };
    let mut bytes = canonical::to_vec(&doc);
    bytes.push(b'\n');
    write(SCENE_FILE, &bytes)
}

pub fn load_scene(dir: &Path) -> Result<RoomState, PersistError> {
    let path = dir.join(SCENE_FILE);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let invalid = |reason: String| PersistError::InvalidScene {
        path: path.clone(),
        reason,
    };
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| invalid(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| invalid("missing schema_version".into()))?;
    if found != SCHEMA_VERSION {
        return Err(PersistError::SchemaVersionMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let doc: SceneDoc = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
    doc.scene.validate().map_err(|e| invalid(e.to_string()))?;

    let read = |rel: &str| -> Result<Vec<u8>, PersistError> {
        if rel.split('/').any(|c| c == ".." || c.is_empty()) {
            return Err(PersistError::InvalidScene {
                path: dir.join(SCENE_FILE),
                reason: format!("unsafe path {rel:?}"),
            });
        }
        let p = dir.join(rel);
        std::fs::read(&p).map_err(io_err(&p))
    };
    let text = |rel: &str| -> Result<String, PersistError> {
        String::from_utf8(read(rel)?).map_err(|e| PersistError::InvalidScene {
            path: dir.join(rel),
            reason: e.to_string(),
        })
    };

    let mut state = RoomState::with_base(doc.scene, doc.location_mesh);
    state.localization = doc.localization;
    for (session_id, group) in doc.sessions {
        for a in group.annotations {
            state.annotations.insert(a.id, a);
        }
        for m in group.markers {
            state.markers.insert(m.id, m);
        }
        for c in group.clouds {
            let (points, colors) = read_ply(&text(&c.file)?).map_err(|e| invalid(e.to_string()))?;
            if points.len() != c.point_count {
                return Err(invalid(format!("{} holds {} points, manifest says {}", c.file, points.len(), c.point_count)));
            }
            state.clouds.insert(c.capture_id, PointCloud {
                capture_id: c.capture_id,
                session_id: session_id.clone(),
                points,
                colors,
                source_pose: c.source_pose,
                created_at: c.created_at,
            });
        }
        for m in group.meshes {
            if !(m.block_size.is_finite() && m.block_size > 0.0) {
                return Err(invalid(format!("bad block size {}", m.block_size)));
            }
            let mut set = MeshBlockSet::new(m.capture_id, session_id.clone(), m.block_size);
            for key in m.blocks {
                let rel = format!("{}/{}", m.dir, key.obj_file_name());
                let mesh = TriangleMesh::from_obj(&text(&rel)?).map_err(|e| invalid(format!("{rel}: {e}")))?;
                set.blocks.insert(key, mesh);
            }
            state.meshes.insert(m.capture_id, MeshCapture {
                blocks: set,
                stopped: m.stopped,
            });
        }
        for s in group.screenshots {
            state.screenshots.insert(s.id, Screenshot {
                id: s.id,
                session_id: session_id.clone(),
                peer: s.peer,
                taken_by: s.taken_by,
                image: read(&s.file)?,
                pose: s.pose,
                taken_at: s.taken_at,
            });
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::AnnotationKind;
    use crate::geometry::{Quat, RigidTransform, Vec3};
    use crate::ids::{AnnotationId, ObjectId};
    use crate::scene::SceneObject;

    fn sample() -> RoomState {
        let mut st = RoomState::default();
        st.scene.objects.insert(ObjectId(5), SceneObject::new(ObjectId(5), "bench"));
        st.location_mesh = Some("site.obj".into());
        for (i, sid) in ["20250101T000000Z-aaaaaaaa", "20250102T000000Z-bbbbbbbb"].iter().enumerate() {
            let sid = SessionId::new(*sid);
            let cid = CaptureId(i as u128 + 1);
            st.clouds.insert(cid, PointCloud {
                capture_id: cid,
                session_id: sid.clone(),
                points: vec![Vec3::new(0.1, 1.0 / 3.0, -2.5e-7), Vec3::new(-0.0, 1e300, 7.0)],
                colors: vec![[1, 2, 3], [255, 0, 9]],
                source_pose: RigidTransform {
                    position: Vec3::new(1.0, 2.0, 3.0),
                    rotation: Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.3),
                },
                created_at: 77,
            });
            let mcid = CaptureId(100 + i as u128);
            let mut set = MeshBlockSet::new(mcid, sid.clone(), 0.5);
            set.blocks.insert(
                BlockKey::new(-1, 0, 2),
                TriangleMesh::new(
                    vec![Vec3::new(-0.4, 0.1, 1.1), Vec3::new(-0.3, 0.1, 1.1), Vec3::new(-0.4, 0.2, 1.2)],
                    vec![[0, 1, 2]],
                )
                .unwrap(),
            );
            st.meshes.insert(mcid, MeshCapture { blocks: set, stopped: i == 0 });
            st.annotations.insert(AnnotationId(i as u128), Annotation {
                id: AnnotationId(i as u128),
                session_id: sid.clone(),
                author: "phone".into(),
                kind: AnnotationKind::Air,
                points: vec![Vec3::new(0.0, 0.1, 0.2)],
                label: Some("Hazard".into()),
                color: [230, 57, 70],
                created_at: 9,
            });
            st.screenshots.insert(ScreenshotId(i as u128), Screenshot {
                id: ScreenshotId(i as u128),
                session_id: sid,
                peer: "phone".into(),
                taken_by: "desk".into(),
                image: vec![0, 1, 2, 255],
                pose: RigidTransform::IDENTITY,
                taken_at: 12,
            });
        }
        st
    }

    #[test]
    fn roundtrip_is_identity_and_byte_stable() {
        let st = sample();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_scene(&st, a.path()).unwrap();
        let loaded = load_scene(a.path()).unwrap();
        assert_eq!(loaded, st);
        save_scene(&loaded, b.path()).unwrap();
        assert_eq!(
            std::fs::read(a.path().join(SCENE_FILE)).unwrap(),
            std::fs::read(b.path().join(SCENE_FILE)).unwrap()
        );
    }

    #[test]
    fn sessions_get_own_directories() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&sample(), dir.path()).unwrap();
        let mut subdirs: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        subdirs.sort();
        assert_eq!(subdirs, vec!["20250101T000000Z-aaaaaaaa", "20250102T000000Z-bbbbbbbb"]);
    }

    #[test]
    fn future_schema_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&RoomState::default(), dir.path()).unwrap();
        let p = dir.path().join(SCENE_FILE);
        let text = std::fs::read_to_string(&p).unwrap().replace("\"schema_version\":1", "\"schema_version\":2");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(
            load_scene(dir.path()),
            Err(PersistError::SchemaVersionMismatch { found: 2, expected: 1 })
        ));
    }
}
