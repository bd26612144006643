//! The authored scene: object hierarchy, transforms, materials and script
//! parameters, plus the field-level delta machinery that keeps peers in sync.

mod apply;
mod diff;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, Digest};
use crate::geometry::{Quat, Vec3, UNIT_QUAT_TOLERANCE};
use crate::ids::ObjectId;

pub use apply::{apply, apply_delta, AppliedDeltas, RejectedDelta};
pub use diff::{diff, POSITION_EPSILON, ROTATION_EPSILON};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTransform {
    pub position: Vec3,
    pub rotation: Quat,
    pub scale: Vec3,
}

impl Default for ObjectTransform {
    fn default() -> Self {
        Self {
            position: Vec3::ZERO,
            rotation: Quat::IDENTITY,
            scale: Vec3::new(1.0, 1.0, 1.0),
        }
    }
}

impl ObjectTransform {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.position.is_finite() || !self.scale.is_finite() {
            return Err(SceneError::InvalidPayload("non-finite transform".into()));
        }
        if !self.rotation.is_unit(UNIT_QUAT_TOLERANCE) {
            return Err(SceneError::InvalidPayload("rotation is not unit-norm".into()));
        }
        if self.scale.x <= 0.0 || self.scale.y <= 0.0 || self.scale.z <= 0.0 {
            return Err(SceneError::InvalidPayload("scale components must be positive".into()));
        }
        Ok(())
    }

    /// Equal within the change-detection epsilons.
    pub fn approx_eq(&self, o: &ObjectTransform) -> bool {
        self.position.max_abs_diff(o.position) <= POSITION_EPSILON
            && self.scale.max_abs_diff(o.scale) <= POSITION_EPSILON
            && self.rotation.max_abs_diff(o.rotation) <= ROTATION_EPSILON
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum MaterialValue {
    Scalar(f64),
    /// RGBA in [0, 1].
    Color([f64; 4]),
    /// Asset name; texture contents are never replicated.
    Texture(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Vec3(Vec3),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: ObjectId,
    pub name: String,
    pub parent: Option<ObjectId>,
    pub transform: ObjectTransform,
    #[serde(default)]
    pub material: BTreeMap<String, MaterialValue>,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl SceneObject {
    pub fn new(id: ObjectId, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            parent: None,
            transform: ObjectTransform::default(),
            material: BTreeMap::new(),
            params: BTreeMap::new(),
        }
    }
}

/// The networked scene root. Objects are keyed (and therefore serialized)
/// in id order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: BTreeMap<ObjectId, SceneObject>,
}

impl SceneState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &ObjectId) -> Option<&SceneObject> {
        self.objects.get(id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Ids of `id` and all of its descendants.
    pub fn subtree(&self, id: ObjectId) -> Vec<ObjectId> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            let cur = out[i];
            out.extend(
                self.objects
                    .values()
                    .filter(|o| o.parent == Some(cur))
                    .map(|o| o.id),
            );
            i += 1;
        }
        out
    }

    /// True when `ancestor` appears on the parent chain starting at `id` (inclusive).
    pub fn is_ancestor_or_self(&self, ancestor: ObjectId, id: ObjectId) -> bool {
        let mut cur = Some(id);
        let mut steps = 0;
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            steps += 1;
            if steps > self.objects.len() {
                return true;
            }
            cur = self.objects.get(&c).and_then(|o| o.parent);
        }
        false
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (id, obj) in &self.objects {
            if *id != obj.id {
                return Err(SceneError::InvalidPayload(format!("object keyed {id} has id {}", obj.id)));
            }
            obj.transform.validate()?;
            if let Some(p) = obj.parent {
                if !self.objects.contains_key(&p) {
                    return Err(SceneError::UnknownParent(p));
                }
                if self.is_ancestor_or_self(obj.id, p) {
                    return Err(SceneError::ParentCycle(obj.id));
                }
            }
        }
        Ok(())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }
}

/// Digest of the canonical serialization.
pub fn state_hash(state: &SceneState) -> Digest {
    Digest::of_bytes(&state.canonical_bytes())
}

/// One field-level scene change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Delta {
    Create { object: SceneObject },
    Destroy { id: ObjectId },
    SetTransform { id: ObjectId, transform: ObjectTransform },
    /// `value: None` removes the property.
    SetMaterialProp { id: ObjectId, name: String, value: Option<MaterialValue> },
    /// `value: None` removes the parameter.
    SetParam { id: ObjectId, name: String, value: Option<ParamValue> },
    SetParent { id: ObjectId, parent: Option<ObjectId> },
    Rename { id: ObjectId, name: String },
}

impl Delta {
    pub fn object(&self) -> ObjectId {
        match self {
            Delta::Create { object } => object.id,
            Delta::Destroy { id }
            | Delta::SetTransform { id, .. }
            | Delta::SetMaterialProp { id, .. }
            | Delta::SetParam { id, .. }
            | Delta::SetParent { id, .. }
            | Delta::Rename { id, .. } => *id,
        }
    }

    /// Name of the field this delta writes; together with [`Delta::object`]
    /// it is the last-writer-wins key.
    pub fn field(&self) -> String {
        match self {
            Delta::Create { .. } => "create".into(),
            Delta::Destroy { .. } => "destroy".into(),
            Delta::SetTransform { .. } => "transform".into(),
            Delta::SetMaterialProp { name, .. } => format!("material/{name}"),
            Delta::SetParam { name, .. } => format!("params/{name}"),
            Delta::SetParent { .. } => "parent".into(),
            Delta::Rename { .. } => "name".into(),
        }
    }

    /// Create, Destroy and SetParent change the hierarchy itself.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            Delta::Create { .. } | Delta::Destroy { .. } | Delta::SetParent { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("object {0} already exists")]
    DuplicateCreate(ObjectId),
    #[error("parent {0} does not exist")]
    UnknownParent(ObjectId),
    #[error("reparenting {0} would create a cycle")]
    ParentCycle(ObjectId),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
}
