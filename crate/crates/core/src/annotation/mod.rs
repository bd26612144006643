//! In-situ markup: depth-projected surface strokes, free-space air strokes,
//! label colors, live cursors and persistent markers.

mod cursor;
mod palette;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::DepthFrame;
use crate::geometry::{GeometryError, Pose, Vec3};
use crate::ids::{AnnotationId, PeerId, SessionId, TimestampMs};
use crate::localization::LocalizationState;

pub use cursor::{
    place_marker, project_cursor, Cursor, Marker, CURSOR_MISS_DISTANCE, EX_SITU_CURSOR_COLOR, IN_SITU_CURSOR_COLOR,
};
pub use palette::{assign_label, LabelPalette, CUSTOM_PALETTE, HAZARD_COLOR, USER_FLOW_COLOR};

/// Consecutive surface-stroke points are at least this far apart (meters).
pub const SURFACE_MIN_SPACING: f64 = 0.01;
/// Consecutive air-stroke points are at least this far apart (meters).
pub const AIR_MIN_SPACING: f64 = 0.02;
/// Color of strokes drawn without a label.
pub const UNLABELED_COLOR: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("no valid depth at the stroke pixel")]
    InvalidDepth,
    #[error("device is not localized")]
    NotLocalized,
    #[error("label must not be empty")]
    EmptyLabel,
    #[error("stroke has no points")]
    EmptyStroke,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Surface,
    Air,
}

/// A finished stroke. Points are in the anchor frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: AnnotationId,
    pub session_id: SessionId,
    pub author: PeerId,
    pub kind: AnnotationKind,
    pub points: Vec<Vec3>,
    pub label: Option<String>,
    pub color: [u8; 3],
    pub created_at: TimestampMs,
}

impl Annotation {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.points.is_empty() {
            return Err(AnnotationError::EmptyStroke);
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite.into());
        }
        if matches!(&self.label, Some(l) if l.is_empty()) {
            return Err(AnnotationError::EmptyLabel);
        }
        Ok(())
    }
}

/// A stroke being drawn, owned by its author until [`Stroke::finish`].
#[derive(Clone, Debug, PartialEq)]
pub struct Stroke {
    pub kind: AnnotationKind,
    pub points: Vec<Vec3>,
}

impl Stroke {
    pub fn new(kind: AnnotationKind) -> Self {
        Self {
            kind,
            points: Vec::new(),
        }
    }

    fn min_spacing(&self) -> f64 {
        match self.kind {
            AnnotationKind::Surface => SURFACE_MIN_SPACING,
            AnnotationKind::Air => AIR_MIN_SPACING,
        }
    }

    /// Appends `p` unless it is closer than the minimum spacing to the last point.
    fn push_spaced(&mut self, p: Vec3) -> bool {
        match self.points.last() {
            Some(last) if last.distance(p) < self.min_spacing() => false,
            _ => {
                self.points.push(p);
                true
            }
        }
    }

    /// Projects `pixel` onto the real surface seen in `depth` and appends it.
    /// Returns whether a point was added.
    pub fn surface_append(
        &mut self,
        pixel: [f64; 2],
        depth: &DepthFrame,
        localization: &LocalizationState,
    ) -> Result<bool, AnnotationError> {
        let alignment = localization.alignment().map_err(|_| AnnotationError::NotLocalized)?;
        if !depth.intrinsics.contains(pixel) {
            return Err(GeometryError::PixelOutOfBounds(pixel).into());
        }
        let d = depth
            .depth_at(pixel[0].floor() as u32, pixel[1].floor() as u32)
            .ok_or(AnnotationError::InvalidDepth)?;
        let p_cam = depth.intrinsics.unproject_camera(pixel, d);
        let p = alignment.apply(depth.camera_pose.apply(p_cam));
        Ok(self.push_spaced(p))
    }

    /// Appends the anchored device position. Returns whether a point was added.
    pub fn air_append(&mut self, device_pose: &Pose, localization: &LocalizationState) -> Result<bool, AnnotationError> {
        let p = localization
            .anchor_point(device_pose.position)
            .map_err(|_| AnnotationError::NotLocalized)?;
        Ok(self.push_spaced(p))
    }

    pub fn finish(
        self,
        id: AnnotationId,
        session_id: SessionId,
        author: PeerId,
        label: Option<String>,
        palette: &mut LabelPalette,
        created_at: TimestampMs,
    ) -> Result<Annotation, AnnotationError> {
        if self.points.is_empty() {
            return Err(AnnotationError::EmptyStroke);
        }
        let color = match &label {
            Some(l) => palette.assign(l)?,
            None => UNLABELED_COLOR,
        };
        Ok(Annotation {
            id,
            session_id,
            author,
            kind: self.kind,
            points: self.points,
            label,
            color,
            created_at,
        })
    }
}
