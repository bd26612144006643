//! Numeric kernels shared by every other module.
//!
//! Conventions: the world (anchor) frame is right-handed, Y-up, meters.
//! Cameras follow the pinhole convention +X right, +Y down, +Z forward, and
//! depth values are z-depth along the optical axis.

mod camera;
mod mesh;
mod raycast;
mod transform;
mod vector;

use thiserror::Error;

pub use camera::{pixel_ray, project, unproject, CameraIntrinsics, CameraView};
pub use mesh::TriangleMesh;
pub use raycast::{intersect_triangle, raycast, Hit, MeshIndex, Ray, RaycastTarget, RAY_EPSILON};
pub use transform::{apply, compose, invert, Pose, RigidTransform, UNIT_QUAT_TOLERANCE};
pub use vector::{Quat, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("depth must be positive and finite, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({}, {}) outside image bounds", .0[0], .0[1])]
    PixelOutOfBounds([f64; 2]),
    #[error("rotation is not unit-norm (|q| = {0})")]
    NonUnitRotation(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
    #[error("triangle {triangle} references a missing vertex")]
    IndexOutOfRange { triangle: usize },
    #[error("per-vertex normal count does not match vertex count")]
    NormalCountMismatch,
    #[error("malformed OBJ at line {line}")]
    ObjParse { line: usize },
}
