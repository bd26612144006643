//! Alignment between the in-situ device's tracking frame and the anchor frame
//! of the pre-captured location mesh.
//!
//! ```text
//! Unlocalized ──restart──▶ Localizing ──offer──▶ AwaitingConfirmation ──confirm──▶ Localized
//!                              ▲                    │  ▲ offer (replaces)          │
//!                              └──────── restart (from any phase) ◀────────────────┘
//! ```
//!
//! Re-localizing replaces the alignment for data captured afterwards only;
//! artifacts already broadcast keep the anchoring they were created with.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, RigidTransform, TriangleMesh, Vec3};
use crate::ids::TimestampMs;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum LocalizationPhase {
    Unlocalized,
    Localizing,
    AwaitingConfirmation {
        candidate: RigidTransform,
    },
    Localized {
        alignment: RigidTransform,
        confirmed_at: TimestampMs,
    },
}

impl LocalizationPhase {
    pub fn name(&self) -> &'static str {
        match self {
            LocalizationPhase::Unlocalized => "unlocalized",
            LocalizationPhase::Localizing => "localizing",
            LocalizationPhase::AwaitingConfirmation { .. } => "awaiting_confirmation",
            LocalizationPhase::Localized { .. } => "localized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalizationError {
    #[error("operation not allowed in phase {0}")]
    InvalidPhase(&'static str),
    #[error("device is not localized")]
    NotLocalized,
    #[error("invalid alignment: {0}")]
    InvalidTransform(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationState {
    pub phase: LocalizationPhase,
}

impl Default for LocalizationState {
    fn default() -> Self {
        Self {
            phase: LocalizationPhase::Unlocalized,
        }
    }
}

impl LocalizationState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_localized(&self) -> bool {
        matches!(self.phase, LocalizationPhase::Localized { .. })
    }

    pub fn offer_candidate(self, candidate: RigidTransform) -> Result<Self, LocalizationError> {
        candidate.validate()?;
        match self.phase {
            LocalizationPhase::Localizing | LocalizationPhase::AwaitingConfirmation { .. } => Ok(Self {
                phase: LocalizationPhase::AwaitingConfirmation { candidate },
            }),
            other => Err(LocalizationError::InvalidPhase(other.name())),
        }
    }

    /// Accepts the pending candidate. Peers load the full scene on the
    /// resulting `Localized` event.
    pub fn confirm(self, now: TimestampMs) -> Result<Self, LocalizationError> {
        match self.phase {
            LocalizationPhase::AwaitingConfirmation { candidate } => Ok(Self {
                phase: LocalizationPhase::Localized {
                    alignment: candidate,
                    confirmed_at: now,
                },
            }),
            other => Err(LocalizationError::InvalidPhase(other.name())),
        }
    }

    pub fn restart(self) -> Self {
        Self {
            phase: LocalizationPhase::Localizing,
        }
    }

    pub fn alignment(&self) -> Result<&RigidTransform, LocalizationError> {
        match &self.phase {
            LocalizationPhase::Localized { alignment, .. } => Ok(alignment),
            _ => Err(LocalizationError::NotLocalized),
        }
    }

    /// Maps a device-local point into the anchor frame.
    pub fn anchor_point(&self, p_local: Vec3) -> Result<Vec3, LocalizationError> {
        Ok(self.alignment()?.apply(p_local))
    }
}

/// The pre-captured site mesh in the anchor frame, with its client-side
/// display opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationMesh {
    pub mesh: TriangleMesh,
    opacity: f64,
}

#[derive(Debug, Error)]
pub enum LocationMeshError {
    #[error("location mesh has no triangles")]
    Empty,
    #[error("opacity {0} outside [0, 1]")]
    Opacity(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("reading location mesh: {0}")]
    Io(#[from] std::io::Error),
}

impl LocationMesh {
    pub fn new(mesh: TriangleMesh) -> Result<Self, LocationMeshError> {
        mesh.validate()?;
        if mesh.is_empty() {
            return Err(LocationMeshError::Empty);
        }
        Ok(Self { mesh, opacity: 0.5 })
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self, LocationMeshError> {
        let text = std::fs::read_to_string(path)?;
        Self::new(TriangleMesh::from_obj(&text)?)
    }

    pub fn opacity(&self) -> f64 {
        self.opacity
    }

    pub fn set_opacity(&mut self, opacity: f64) -> Result<(), LocationMeshError> {
        if !(0.0..=1.0).contains(&opacity) {
            return Err(LocationMeshError::Opacity(opacity));
        }
        self.opacity = opacity;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;

    fn t(x: f64) -> RigidTransform {
        RigidTransform::from_translation(Vec3::new(x, 0.0, 0.0))
    }

    #[test]
    fn candidate_flow() {
        let s = LocalizationState::new().restart();
        let s = s.offer_candidate(t(1.0)).unwrap();
        assert_eq!(s.phase, LocalizationPhase::AwaitingConfirmation { candidate: t(1.0) });
        let s = s.offer_candidate(t(2.0)).unwrap();
        assert_eq!(s.phase, LocalizationPhase::AwaitingConfirmation { candidate: t(2.0) });
        let s = s.confirm(42).unwrap();
        assert_eq!(
            s.phase,
            LocalizationPhase::Localized {
                alignment: t(2.0),
                confirmed_at: 42
            }
        );
        assert_eq!(
            s.offer_candidate(t(3.0)),
            Err(LocalizationError::InvalidPhase("localized"))
        );
    }

    #[test]
    fn invalid_transitions() {
        let s = LocalizationState::new();
        assert_eq!(s.offer_candidate(t(0.0)), Err(LocalizationError::InvalidPhase("unlocalized")));
        assert_eq!(s.confirm(0), Err(LocalizationError::InvalidPhase("unlocalized")));
        assert_eq!(s.restart().confirm(0), Err(LocalizationError::InvalidPhase("localizing")));
        assert_eq!(s.anchor_point(Vec3::ZERO), Err(LocalizationError::NotLocalized));
    }

    #[test]
    fn restart_from_any_phase() {
        let localized = LocalizationState::new()
            .restart()
            .offer_candidate(t(1.0))
            .unwrap()
            .confirm(1)
            .unwrap();
        assert_eq!(localized.restart().phase, LocalizationPhase::Localizing);
        assert_eq!(LocalizationState::new().restart().phase, LocalizationPhase::Localizing);
    }

    #[test]
    fn anchor_point_translation() {
        let s = LocalizationState::new()
            .restart()
            .offer_candidate(RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0)))
            .unwrap()
            .confirm(0)
            .unwrap();
        assert_eq!(s.anchor_point(Vec3::new(1.0, 1.0, 1.0)).unwrap(), Vec3::new(2.0, 3.0, 4.0));
    }

    #[test]
    fn rejects_non_unit_candidate() {
        let bad = RigidTransform {
            position: Vec3::ZERO,
            rotation: Quat::new(0.5, 0.0, 0.0, 0.0),
        };
        assert!(matches!(
            LocalizationState::new().restart().offer_candidate(bad),
            Err(LocalizationError::InvalidTransform(_))
        ));
    }

    #[test]
    fn location_mesh_opacity_bounds() {
        let mesh = TriangleMesh::from_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        let mut lm = LocationMesh::new(mesh).unwrap();
        assert!(lm.set_opacity(0.2).is_ok());
        assert!(lm.set_opacity(1.5).is_err());
        assert!(matches!(LocationMesh::new(TriangleMesh::default()), Err(LocationMeshError::Empty)));
    }
}
