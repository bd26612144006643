use serde::{Deserialize, Serialize};

use super::{GeometryError, Quat, Vec3};

/// Rigid motion mapping a source frame into a target frame.
///
/// `apply(p) = rotation · p + position`. Rotation is kept unit-norm; every
/// composition renormalizes so long chains do not drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub position: Vec3,
    pub rotation: Quat,
}

/// A device or object pose. Same algebra as [`RigidTransform`]: it maps the
/// body frame into its parent frame.
pub type Pose = RigidTransform;

pub const UNIT_QUAT_TOLERANCE: f64 = 1e-9;

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        position: Vec3::ZERO,
        rotation: Quat::IDENTITY,
    };

    pub fn new(position: Vec3, rotation: Quat) -> Result<Self, GeometryError> {
        let t = Self { position, rotation };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(position: Vec3) -> Self {
        Self {
            position,
            rotation: Quat::IDENTITY,
        }
    }

    pub fn from_rotation(rotation: Quat) -> Self {
        Self {
            position: Vec3::ZERO,
            rotation: rotation.normalized(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.position.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if !self.rotation.is_unit(UNIT_QUAT_TOLERANCE) {
            return Err(GeometryError::NonUnitRotation(self.rotation.norm()));
        }
        Ok(())
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.position
    }

    /// Rotates a direction without translating it.
    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            position: self.rotation.rotate(other.position) + self.position,
            rotation: self.rotation.mul(other.rotation).normalized(),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let r = self.rotation.conjugate();
        RigidTransform {
            position: -r.rotate(self.position),
            rotation: r,
        }
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

pub fn apply(t: &RigidTransform, p: Vec3) -> Vec3 {
    t.apply(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_neutral() {
        let p = Vec3::new(1.5, -2.0, 0.25);
        assert_eq!(apply(&RigidTransform::IDENTITY, p), p);
    }

    #[test]
    fn inverse_roundtrip() {
        let t = RigidTransform {
            position: Vec3::new(3.0, -1.0, 2.0),
            rotation: Quat::from_axis_angle(Vec3::new(0.2, 1.0, -0.4), 1.3),
        };
        let p = Vec3::new(0.5, 7.0, -3.0);
        assert!(apply(&invert(&t), apply(&t, p)).max_abs_diff(p) < 1e-12);
        let id = compose(&t, &invert(&t));
        assert!(id.position.norm() < 1e-12);
        assert!(id.rotation.max_abs_diff(Quat::IDENTITY) < 1e-12);
    }

    #[test]
    fn rejects_non_unit_rotation() {
        let err = RigidTransform::new(Vec3::ZERO, Quat::new(2.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, GeometryError::NonUnitRotation(_)));
    }

    #[test]
    fn long_composition_chain_stays_unit() {
        let step = RigidTransform {
            position: Vec3::new(0.001, 0.0, 0.0),
            rotation: Quat::from_axis_angle(Vec3::new(0.3, 0.9, 0.1), 0.0123),
        };
        let mut acc = RigidTransform::IDENTITY;
        for _ in 0..100_000 {
            acc = acc.compose(&step);
        }
        assert!((acc.rotation.norm() - 1.0).abs() < 1e-6);
    }
}
