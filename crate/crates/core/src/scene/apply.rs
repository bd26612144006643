use super::{Delta, MaterialValue, ParamValue, SceneError, SceneObject, SceneState};

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedDelta {
    pub index: usize,
    pub error: SceneError,
}

/// Result of tolerant application: the new state plus every delta that was
/// skipped and why.
#[derive(Debug, Clone)]
pub struct AppliedDeltas {
    pub state: SceneState,
    pub rejected: Vec<RejectedDelta>,
}

/// Applies `deltas` in order. Invalid deltas are reported and skipped; the
/// remainder still apply.
pub fn apply(deltas: &[Delta], state: &SceneState) -> AppliedDeltas {
    let mut next = state.clone();
    let mut rejected = Vec::new();
    for (index, d) in deltas.iter().enumerate() {
        if let Err(error) = apply_delta(&mut next, d) {
            rejected.push(RejectedDelta { index, error });
        }
    }
    AppliedDeltas { state: next, rejected }
}

fn check_material(v: &MaterialValue) -> Result<(), SceneError> {
    let ok = match v {
        MaterialValue::Scalar(x) => x.is_finite(),
        MaterialValue::Color(c) => c.iter().all(|x| x.is_finite()),
        MaterialValue::Texture(_) => true,
    };
    if ok {
        Ok(())
    } else {
        Err(SceneError::InvalidPayload("non-finite material value".into()))
    }
}

fn check_param(v: &ParamValue) -> Result<(), SceneError> {
    let ok = match v {
        ParamValue::Float(x) => x.is_finite(),
        ParamValue::Vec3(v) => v.is_finite(),
        ParamValue::Bool(_) | ParamValue::Int(_) | ParamValue::Text(_) => true,
    };
    if ok {
        Ok(())
    } else {
        Err(SceneError::InvalidPayload("non-finite parameter value".into()))
    }
}

fn existing<'a>(state: &'a mut SceneState, id: &super::ObjectId) -> Result<&'a mut SceneObject, SceneError> {
    state.objects.get_mut(id).ok_or(SceneError::UnknownObject(*id))
}

/// Applies one delta in place. On error the state is unchanged.
pub fn apply_delta(state: &mut SceneState, delta: &Delta) -> Result<(), SceneError> {
    match delta {
        Delta::Create { object } => {
            if state.objects.contains_key(&object.id) {
                return Err(SceneError::DuplicateCreate(object.id));
            }
            object.transform.validate()?;
            object.material.values().try_for_each(check_material)?;
            object.params.values().try_for_each(check_param)?;
            if let Some(p) = object.parent {
                if p == object.id {
                    return Err(SceneError::ParentCycle(object.id));
                }
                if !state.objects.contains_key(&p) {
                    return Err(SceneError::UnknownParent(p));
                }
            }
            state.objects.insert(object.id, object.clone());
        }
        Delta::Destroy { id } => {
            if !state.objects.contains_key(id) {
                return Err(SceneError::UnknownObject(*id));
            }
            for gone in state.subtree(*id) {
                state.objects.remove(&gone);
            }
        }
        Delta::SetTransform { id, transform } => {
            transform.validate()?;
            existing(state, id)?.transform = *transform;
        }
        Delta::SetMaterialProp { id, name, value } => {
            if let Some(v) = value {
                check_material(v)?;
            }
            let obj = existing(state, id)?;
            match value {
                Some(v) => {
                    obj.material.insert(name.clone(), v.clone());
                }
                None => {
                    obj.material.remove(name);
                }
            }
        }
        Delta::SetParam { id, name, value } => {
            if let Some(v) = value {
                check_param(v)?;
            }
            let obj = existing(state, id)?;
            match value {
                Some(v) => {
                    obj.params.insert(name.clone(), v.clone());
                }
                None => {
                    obj.params.remove(name);
                }
            }
        }
        Delta::SetParent { id, parent } => {
            if !state.objects.contains_key(id) {
                return Err(SceneError::UnknownObject(*id));
            }
            if let Some(p) = parent {
                if !state.objects.contains_key(p) {
                    return Err(SceneError::UnknownParent(*p));
                }
                if state.is_ancestor_or_self(*id, *p) {
                    return Err(SceneError::ParentCycle(*id));
                }
            }
            existing(state, id)?.parent = *parent;
        }
        Delta::Rename { id, name } => {
            existing(state, id)?.name = name.clone();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::ids::ObjectId;
    use crate::scene::{state_hash, ObjectTransform};

    fn obj(id: u128, parent: Option<u128>) -> SceneObject {
        let mut o = SceneObject::new(ObjectId(id), format!("obj{id}"));
        o.parent = parent.map(ObjectId);
        o
    }

    fn base() -> SceneState {
        let mut s = SceneState::new();
        for o in [obj(1, None), obj(2, Some(1)), obj(3, Some(2)), obj(4, None)] {
            s.objects.insert(o.id, o);
        }
        s
    }

    #[test]
    fn empty_delta_list_is_identity() {
        let s = base();
        let out = apply(&[], &s);
        assert_eq!(out.state, s);
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn create_then_destroy_leaves_no_residue() {
        let s = base();
        let out = apply(
            &[
                Delta::Create { object: obj(9, Some(4)) },
                Delta::Destroy { id: ObjectId(9) },
            ],
            &s,
        );
        assert_eq!(state_hash(&out.state), state_hash(&s));
    }

    #[test]
    fn destroy_cascades_to_children() {
        let out = apply(&[Delta::Destroy { id: ObjectId(1) }], &base());
        assert_eq!(out.state.objects.keys().copied().collect::<Vec<_>>(), vec![ObjectId(4)]);
    }

    #[test]
    fn unknown_and_duplicate_are_reported_and_skipped() {
        let t = ObjectTransform {
            position: Vec3::new(1.0, 0.0, 0.0),
            ..Default::default()
        };
        let out = apply(
            &[
                Delta::SetTransform { id: ObjectId(77), transform: t },
                Delta::Create { object: obj(1, None) },
                Delta::SetTransform { id: ObjectId(4), transform: t },
            ],
            &base(),
        );
        assert_eq!(
            out.rejected,
            vec![
                RejectedDelta { index: 0, error: SceneError::UnknownObject(ObjectId(77)) },
                RejectedDelta { index: 1, error: SceneError::DuplicateCreate(ObjectId(1)) },
            ]
        );
        assert_eq!(out.state.objects[&ObjectId(4)].transform, t);
    }

    #[test]
    fn reparent_cycle_rejected() {
        let out = apply(&[Delta::SetParent { id: ObjectId(1), parent: Some(ObjectId(3)) }], &base());
        assert_eq!(out.rejected[0].error, SceneError::ParentCycle(ObjectId(1)));
        let out = apply(&[Delta::SetParent { id: ObjectId(1), parent: Some(ObjectId(1)) }], &base());
        assert_eq!(out.rejected.len(), 1);
    }

    #[test]
    fn set_deltas_are_idempotent() {
        let d = Delta::SetParam {
            id: ObjectId(2),
            name: "speed".into(),
            value: Some(ParamValue::Float(2.5)),
        };
        let once = apply(std::slice::from_ref(&d), &base()).state;
        let twice = apply(&[d.clone(), d], &base()).state;
        assert_eq!(state_hash(&once), state_hash(&twice));
    }

    #[test]
    fn invalid_transform_rejected() {
        let t = ObjectTransform {
            scale: Vec3::new(0.0, 1.0, 1.0),
            ..Default::default()
        };
        let out = apply(&[Delta::SetTransform { id: ObjectId(1), transform: t }], &base());
        assert!(matches!(out.rejected[0].error, SceneError::InvalidPayload(_)));
    }
}
