use serde::{Deserialize, Serialize};

use crate::geometry::{CameraView, RaycastTarget, Vec3};
use crate::ids::{MarkerId, PeerId, PeerRole, SessionId, TimestampMs};

/// Where a cursor lands when its ray hits nothing (meters along the ray).
pub const CURSOR_MISS_DISTANCE: f64 = 2.0;

pub const IN_SITU_CURSOR_COLOR: [u8; 3] = [109, 210, 104];
pub const EX_SITU_CURSOR_COLOR: [u8; 3] = [103, 179, 230];

/// A shared 3D pointer in the anchor frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cursor {
    pub peer: PeerId,
    pub role: PeerRole,
    pub position: Vec3,
    pub normal: Option<Vec3>,
    pub live: bool,
}

impl Cursor {
    /// In-situ cursors are green, ex-situ cursors blue.
    pub fn color(&self) -> [u8; 3] {
        match self.role {
            PeerRole::InSitu => IN_SITU_CURSOR_COLOR,
            PeerRole::ExSitu => EX_SITU_CURSOR_COLOR,
        }
    }
}

/// A cursor frozen in place. Immutable once placed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub id: MarkerId,
    pub session_id: SessionId,
    pub placed_at: TimestampMs,
    pub cursor: Cursor,
}

/// Casts the screen pixel through `camera` into the shared meshes. Misses
/// place the cursor [`CURSOR_MISS_DISTANCE`] along the ray without a normal.
pub fn project_cursor<T: RaycastTarget + ?Sized>(
    peer: PeerId,
    role: PeerRole,
    pixel: [f64; 2],
    camera: &CameraView,
    meshes: &T,
) -> Cursor {
    let ray = camera.ray(pixel);
    let (position, normal) = match meshes.raycast(&ray) {
        Some(hit) => (hit.point, Some(hit.normal)),
        None => (ray.at(CURSOR_MISS_DISTANCE), None),
    };
    Cursor {
        peer,
        role,
        position,
        normal,
        live: true,
    }
}

pub fn place_marker(cursor: &Cursor, id: MarkerId, session_id: SessionId, placed_at: TimestampMs) -> Marker {
    Marker {
        id,
        session_id,
        placed_at,
        cursor: Cursor {
            live: false,
            ..cursor.clone()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};

    fn camera() -> CameraView {
        CameraView {
            pose: Pose::IDENTITY,
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 50.0, 40.0, 100, 80).unwrap(),
        }
    }

    fn wall(z: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(-5.0, -5.0, z),
                Vec3::new(5.0, -5.0, z),
                Vec3::new(5.0, 5.0, z),
                Vec3::new(-5.0, 5.0, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn lands_on_wall_with_normal() {
        let c = project_cursor("a".into(), PeerRole::InSitu, [50.0, 40.0], &camera(), &vec![wall(3.2)]);
        assert!(c.position.max_abs_diff(Vec3::new(0.0, 0.0, 3.2)) < 1e-12);
        assert!(c.normal.unwrap().max_abs_diff(-Vec3::Z) < 1e-12);
        assert!(c.live);
    }

    #[test]
    fn miss_falls_back_to_two_meters() {
        let c = project_cursor("a".into(), PeerRole::ExSitu, [10.0, 70.0], &camera(), &Vec::<TriangleMesh>::new());
        let ray = camera().ray([10.0, 70.0]);
        assert!(c.position.max_abs_diff(ray.origin + ray.direction * 2.0) < 1e-12);
        assert_eq!(c.normal, None);
    }

    #[test]
    fn role_colors() {
        let mut c = project_cursor("a".into(), PeerRole::InSitu, [1.0, 1.0], &camera(), &Vec::<TriangleMesh>::new());
        assert_eq!(c.color(), IN_SITU_CURSOR_COLOR);
        c.role = PeerRole::ExSitu;
        assert_eq!(c.color(), EX_SITU_CURSOR_COLOR);
    }

    #[test]
    fn markers_freeze_cursor() {
        let c = project_cursor("a".into(), PeerRole::InSitu, [50.0, 40.0], &camera(), &vec![wall(1.0)]);
        let m1 = place_marker(&c, MarkerId(1), "s".into(), 5);
        let m2 = place_marker(&c, MarkerId(2), "s".into(), 6);
        assert!(!m1.cursor.live);
        assert_eq!(m1.cursor.position, c.position);
        assert_ne!(m1.id, m2.id);
    }
}
