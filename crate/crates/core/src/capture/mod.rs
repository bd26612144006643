//! In-situ spatial capture: single-frame RGB-D snapshots unprojected into
//! anchored colored point clouds, and incrementally streamed coarse meshes.

mod blocks;
mod ply;
mod timer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Pose, RigidTransform, Vec3};
use crate::ids::{CaptureId, SessionId, TimestampMs};
use crate::localization::{LocalizationError, LocalizationState};

pub use blocks::{BlockKey, MeshBlockSet, DEFAULT_BLOCK_SIZE};
pub use ply::{read_ply, write_ply};
pub use timer::{CaptureStopped, MeshCaptureTimer, TimerPhase, DEFAULT_MESH_BUDGET_SECS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaptureError {
    #[error("device is not localized")]
    NotLocalized,
    #[error("depth and color frames are not registered: {0}")]
    FrameMismatch(String),
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("mesh capture is not running")]
    NotCapturing,
    #[error("mesh block {key} has vertices outside its bounds")]
    BlockOutOfBounds { key: BlockKey },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("malformed PLY: {0}")]
    Ply(String),
}

impl From<LocalizationError> for CaptureError {
    fn from(_: LocalizationError) -> Self {
        CaptureError::NotLocalized
    }
}

/// Row-major depth image in meters; `0` and `NaN` mark invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    pub depths: Vec<f32>,
    pub intrinsics: CameraIntrinsics,
    /// Camera pose in the device-local tracking frame.
    pub camera_pose: Pose,
    pub timestamp: TimestampMs,
}

impl DepthFrame {
    pub fn validate(&self) -> Result<(), CaptureError> {
        if self.depths.len() != (self.width as usize) * (self.height as usize) {
            return Err(CaptureError::FrameMismatch(format!(
                "{} depth samples for {}x{}",
                self.depths.len(),
                self.width,
                self.height
            )));
        }
        if self.intrinsics.width != self.width || self.intrinsics.height != self.height {
            return Err(CaptureError::FrameMismatch("intrinsics size differs from frame".into()));
        }
        self.intrinsics.validate()?;
        Ok(())
    }

    /// Depth at integer pixel `(u, v)` if it is a usable measurement.
    pub fn depth_at(&self, u: u32, v: u32) -> Option<f64> {
        if u >= self.width || v >= self.height {
            return None;
        }
        let d = f64::from(self.depths[(v * self.width + u) as usize]);
        (d > 0.0 && d.is_finite()).then_some(d)
    }
}

/// Row-major RGB8 image registered pixel-for-pixel with a [`DepthFrame`].
#[derive(Clone, Debug, PartialEq)]
pub struct ColorFrame {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl ColorFrame {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            rgb: rgb.repeat((width * height) as usize),
        }
    }

    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * (v * self.width + u) as usize;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Colored point cloud in the anchor frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub capture_id: CaptureId,
    pub session_id: SessionId,
    pub points: Vec<Vec3>,
    pub colors: Vec<[u8; 3]>,
    /// Camera pose at capture time, in the anchor frame.
    pub source_pose: Pose,
    pub created_at: TimestampMs,
}

impl PointCloud {
    pub fn validate(&self) -> Result<(), CaptureError> {
        if self.points.len() != self.colors.len() {
            return Err(CaptureError::FrameMismatch("point and color counts differ".into()));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(CaptureError::Geometry(GeometryError::NonFinite));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotOptions {
    pub stride: u32,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for SnapshotOptions {
    fn default() -> Self {
        Self {
            stride: 4,
            min_depth: 0.1,
            max_depth: 8.0,
        }
    }
}

/// Identity and provenance stamped onto a new capture.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureMeta {
    pub capture_id: CaptureId,
    pub session_id: SessionId,
    pub created_at: TimestampMs,
}

/// Unprojects every valid pixel on the stride grid into the anchor frame.
pub fn snapshot(
    depth: &DepthFrame,
    color: &ColorFrame,
    localization: &LocalizationState,
    opts: &SnapshotOptions,
    meta: CaptureMeta,
) -> Result<PointCloud, CaptureError> {
    let alignment = localization.alignment()?;
    snapshot_aligned(depth, color, alignment, opts, meta)
}

/// [`snapshot`] with an explicit device→anchor alignment.
pub fn snapshot_aligned(
    depth: &DepthFrame,
    color: &ColorFrame,
    alignment: &RigidTransform,
    opts: &SnapshotOptions,
    meta: CaptureMeta,
) -> Result<PointCloud, CaptureError> {
    if opts.stride == 0 {
        return Err(CaptureError::InvalidStride);
    }
    depth.validate()?;
    if color.width != depth.width
        || color.height != depth.height
        || color.rgb.len() != 3 * (color.width as usize) * (color.height as usize)
    {
        return Err(CaptureError::FrameMismatch("color frame size differs from depth".into()));
    }
    let camera_to_anchor = alignment.compose(&depth.camera_pose);
    let k = &depth.intrinsics;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for v in (0..depth.height).step_by(opts.stride as usize) {
        for u in (0..depth.width).step_by(opts.stride as usize) {
            let Some(d) = depth.depth_at(u, v) else {
                continue;
            };
            if d < opts.min_depth || d > opts.max_depth {
                continue;
            }
            let p_cam = k.unproject_camera([f64::from(u), f64::from(v)], d);
            points.push(camera_to_anchor.apply(p_cam));
            colors.push(color.pixel(u, v));
        }
    }
    Ok(PointCloud {
        capture_id: meta.capture_id,
        session_id: meta.session_id,
        points,
        colors,
        source_pose: camera_to_anchor,
        created_at: meta.created_at,
    })
}

/// Maps a unit normal to a display color: `round(255 · (n + 1) / 2)`.
pub fn normal_color(n: Vec3) -> [u8; 3] {
    let q = |c: f64| (255.0 * (c.clamp(-1.0, 1.0) + 1.0) / 2.0).round() as u8;
    [q(n.x), q(n.y), q(n.z)]
}
