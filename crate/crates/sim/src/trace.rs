//! Capture traces: a header plus timed in-situ actions, stored as JSON with
//! frame and mesh assets referenced by relative path.

use std::collections::BTreeMap;
use std::path::Path;

use arco_core::canonical;
use arco_core::capture::{BlockKey, ColorFrame};
use arco_core::geometry::{CameraIntrinsics, Pose, RigidTransform, TriangleMesh};
use arco_core::ids::{PeerId, TimestampMs};
use serde::{Deserialize, Serialize};

use crate::frames::{color_from_ppm, color_to_ppm, DepthImage};
use crate::SimError;

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub peer: PeerId,
    pub intrinsics: CameraIntrinsics,
    /// Alignment candidates a VPS would offer, by index.
    #[serde(default)]
    pub candidates: Vec<RigidTransform>,
    pub base_time: TimestampMs,
    /// Site mesh (OBJ, anchor frame) used for cursor raycasts.
    #[serde(default)]
    pub location_mesh: Option<String>,
    #[serde(default = "default_block_size")]
    pub block_size: f64,
    #[serde(default = "default_stride")]
    pub stride: u32,
}

fn default_block_size() -> f64 {
    arco_core::capture::DEFAULT_BLOCK_SIZE
}

fn default_stride() -> u32 {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    OfferCandidate {
        index: usize,
    },
    /// Confirms the pending candidate. With `alignment`, that transform is
    /// offered first.
    Confirm {
        #[serde(default)]
        alignment: Option<RigidTransform>,
    },
    Restart,
    /// Device camera pose in the local tracking frame.
    Move {
        pose: Pose,
    },
    /// Current camera image; streamed to the live-view panel.
    Frame {
        depth: String,
        color: String,
    },
    Snapshot {
        depth: String,
        color: String,
    },
    StartMeshCapture,
    /// Mesh block in the anchor frame.
    MeshBlock {
        key: BlockKey,
        mesh: String,
    },
    /// Surface Draw on the latest depth frame.
    SurfacePoint {
        pixel: [f64; 2],
    },
    /// Air Draw at the current device position.
    AirPoint,
    CursorAt {
        pixel: [f64; 2],
    },
    Marker,
    /// Finishes the current stroke with an optional label.
    Label {
        #[serde(default)]
        text: Option<String>,
    },
    Disconnect,
    Reconnect,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::OfferCandidate { .. } => "offer_candidate",
            Action::Confirm { .. } => "confirm",
            Action::Restart => "restart",
            Action::Move { .. } => "move",
            Action::Frame { .. } => "frame",
            Action::Snapshot { .. } => "snapshot",
            Action::StartMeshCapture => "start_mesh_capture",
            Action::MeshBlock { .. } => "mesh_block",
            Action::SurfacePoint { .. } => "surface_point",
            Action::AirPoint => "air_point",
            Action::CursorAt { .. } => "cursor_at",
            Action::Marker => "marker",
            Action::Label { .. } => "label",
            Action::Disconnect => "disconnect",
            Action::Reconnect => "reconnect",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    /// Offset from the start of the run.
    pub at_ms: u64,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_version: u32,
    pub header: TraceHeader,
    pub actions: Vec<TimedAction>,
}

/// Decoded assets, keyed by the relative path used in the trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assets {
    pub depth: BTreeMap<String, DepthImage>,
    pub color: BTreeMap<String, ColorFrame>,
    pub meshes: BTreeMap<String, TriangleMesh>,
}

/// A trace together with everything it references.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedTrace {
    pub trace: Trace,
    pub assets: Assets,
}

fn safe_rel(p: &str) -> Result<&str, SimError> {
    let ok = !p.is_empty() && !p.starts_with('/') && !p.contains('\\') && p.split('/').all(|c| !c.is_empty() && c != "..");
    if ok {
        Ok(p)
    } else {
        Err(SimError::TraceInvalid(format!("asset path {p:?} must be relative and stay inside the trace directory")))
    }
}

impl LoadedTrace {
    /// Checks ordering and that every referenced asset is present and sized
    /// consistently with the header.
    pub fn validate(&self) -> Result<(), SimError> {
        let t = &self.trace;
        if t.trace_version != TRACE_VERSION {
            return Err(SimError::TraceInvalid(format!(
                "trace_version {} (expected {TRACE_VERSION})",
                t.trace_version
            )));
        }
        t.header
            .intrinsics
            .validate()
            .map_err(|e| SimError::TraceInvalid(format!("intrinsics: {e}")))?;
        if !(t.header.block_size.is_finite() && t.header.block_size > 0.0) || t.header.stride == 0 {
            return Err(SimError::TraceInvalid("block_size and stride must be positive".into()));
        }
        for c in &t.header.candidates {
            c.validate().map_err(|e| SimError::TraceInvalid(format!("candidate: {e}")))?;
        }
        if let Some(m) = &t.header.location_mesh {
            self.mesh(m)?;
        }
        let (w, h) = (t.header.intrinsics.width, t.header.intrinsics.height);
        let mut prev = 0;
        for (i, a) in t.actions.iter().enumerate() {
            if a.at_ms < prev {
                return Err(SimError::TraceInvalid(format!("action {i} goes back in time")));
            }
            prev = a.at_ms;
            match &a.action {
                Action::Frame { depth, color } | Action::Snapshot { depth, color } => {
                    let d = self.depth(depth)?;
                    let c = self.color(color)?;
                    if (d.width, d.height) != (w, h) || (c.width, c.height) != (w, h) {
                        return Err(SimError::TraceInvalid(format!("action {i}: frame size differs from intrinsics")));
                    }
                }
                Action::MeshBlock { mesh, .. } => {
                    self.mesh(mesh)?;
                }
                Action::OfferCandidate { index } if *index >= t.header.candidates.len() => {
                    return Err(SimError::TraceInvalid(format!("action {i}: no candidate {index}")));
                }
                Action::Confirm { alignment: Some(al) } => {
                    al.validate().map_err(|e| SimError::TraceInvalid(format!("action {i}: {e}")))?;
                }
                Action::Move { pose } => {
                    pose.validate().map_err(|e| SimError::TraceInvalid(format!("action {i}: {e}")))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn depth(&self, name: &str) -> Result<&DepthImage, SimError> {
        self.assets
            .depth
            .get(name)
            .ok_or_else(|| SimError::TraceInvalid(format!("missing depth frame {name}")))
    }

    pub fn color(&self, name: &str) -> Result<&ColorFrame, SimError> {
        self.assets
            .color
            .get(name)
            .ok_or_else(|| SimError::TraceInvalid(format!("missing color frame {name}")))
    }

    pub fn mesh(&self, name: &str) -> Result<&TriangleMesh, SimError> {
        self.assets
            .meshes
            .get(name)
            .ok_or_else(|| SimError::TraceInvalid(format!("missing mesh {name}")))
    }

    /// Reads `path` and every asset it references (relative to its directory).
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |e: std::io::Error| SimError::Io(p.display().to_string(), e)
        };
        let text = std::fs::read(path).map_err(io(path))?;
        let trace: Trace = serde_json::from_slice(&text).map_err(|e| SimError::TraceInvalid(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut assets = Assets::default();
        let mut mesh_refs: Vec<&String> = trace.header.location_mesh.iter().collect();
        for a in &trace.actions {
            match &a.action {
                Action::Frame { depth, color } | Action::Snapshot { depth, color } => {
                    if !assets.depth.contains_key(depth) {
                        let p = dir.join(safe_rel(depth)?);
                        assets.depth.insert(depth.clone(), DepthImage::from_pgm(&std::fs::read(&p).map_err(io(&p))?)?);
                    }
                    if !assets.color.contains_key(color) {
                        let p = dir.join(safe_rel(color)?);
                        assets.color.insert(color.clone(), color_from_ppm(&std::fs::read(&p).map_err(io(&p))?)?);
                    }
                }
                Action::MeshBlock { mesh, .. } => mesh_refs.push(mesh),
                _ => {}
            }
        }
        for m in mesh_refs {
            if !assets.meshes.contains_key(m) {
                let p = dir.join(safe_rel(m)?);
                let text = std::fs::read_to_string(&p).map_err(io(&p))?;
                let mesh = TriangleMesh::from_obj(&text).map_err(|e| SimError::TraceInvalid(format!("{m}: {e}")))?;
                assets.meshes.insert(m.clone(), mesh);
            }
        }
        let loaded = LoadedTrace { trace, assets };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Writes `trace.json` and all assets into `dir`.
    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf, SimError> {
        let write = |rel: &str, bytes: &[u8]| -> Result<(), SimError> {
            let p = dir.join(safe_rel(rel)?);
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(|e| SimError::Io(parent.display().to_string(), e))?;
            }
            std::fs::write(&p, bytes).map_err(|e| SimError::Io(p.display().to_string(), e))
        };
        for (name, d) in &self.assets.depth {
            write(name, &d.to_pgm())?;
        }
        for (name, c) in &self.assets.color {
            write(name, &color_to_ppm(c))?;
        }
        for (name, m) in &self.assets.meshes {
            write(name, m.to_obj().as_bytes())?;
        }
        let mut json = canonical::to_vec(&self.trace);
        json.push(b'\n');
        write("trace.json", &json)?;
        Ok(dir.join("trace.json"))
    }
}
