use std::collections::BTreeSet;

use super::{apply_delta, Delta, SceneObject, SceneState};
use crate::ids::ObjectId;

/// Per-component tolerance on position and scale below which no delta is emitted.
pub const POSITION_EPSILON: f64 = 1e-5;
/// Per-component tolerance on rotation quaternions.
pub const ROTATION_EPSILON: f64 = 1e-5;

/// Minimal field-level deltas turning `prev` into `next`.
///
/// Output runs in four causal phases so every delta is valid when applied in
/// order: creates (parents before children), field updates (by object id,
/// then field name), reparenting (ordered to never form a transient cycle)
/// and finally destroys of whatever remains. Within each phase ties are
/// broken by object id.
pub fn diff(prev: &SceneState, next: &SceneState) -> Vec<Delta> {
    let mut out = Vec::new();
    let mut work = prev.clone();
    let emit = |work: &mut SceneState, d: Delta, out: &mut Vec<Delta>| {
        // Every emitted delta is valid against `work`; a failure here means
        // `next` itself is inconsistent, in which case the delta is dropped.
        if apply_delta(work, &d).is_ok() {
            out.push(d);
        }
    };

    let mut to_create: BTreeSet<ObjectId> = next
        .objects
        .keys()
        .filter(|id| !prev.objects.contains_key(id))
        .copied()
        .collect();
    loop {
        let ready: Vec<ObjectId> = to_create
            .iter()
            .filter(|id| match next.objects[id].parent {
                None => true,
                Some(p) => work.objects.contains_key(&p),
            })
            .copied()
            .collect();
        if ready.is_empty() {
            break;
        }
        for id in ready {
            to_create.remove(&id);
            let object = next.objects[&id].clone();
            emit(&mut work, Delta::Create { object }, &mut out);
        }
    }

    for (id, before) in &prev.objects {
        if let Some(after) = next.objects.get(id) {
            for d in field_updates(before, after) {
                emit(&mut work, d, &mut out);
            }
        }
    }

    let mut to_reparent: BTreeSet<ObjectId> = prev
        .objects
        .iter()
        .filter_map(|(id, before)| {
            let after = next.objects.get(id)?;
            (after.parent != before.parent).then_some(*id)
        })
        .collect();
    while let Some(&first) = to_reparent.iter().next() {
        let ready = to_reparent.iter().copied().find(|id| match next.objects[id].parent {
            None => true,
            Some(p) => work.objects.contains_key(&p) && !work.is_ancestor_or_self(*id, p),
        });
        match ready {
            Some(id) => {
                to_reparent.remove(&id);
                let parent = next.objects[&id].parent;
                emit(&mut work, Delta::SetParent { id, parent }, &mut out);
            }
            None => {
                // Every remaining move closes a cycle in the current
                // intermediate state; detach one to break it.
                emit(&mut work, Delta::SetParent { id: first, parent: None }, &mut out);
            }
        }
    }

    let removed: Vec<ObjectId> = prev
        .objects
        .keys()
        .filter(|id| !next.objects.contains_key(id))
        .copied()
        .collect();
    for id in removed {
        if work.objects.contains_key(&id) {
            emit(&mut work, Delta::Destroy { id }, &mut out);
        }
    }
    out
}

fn field_updates(before: &SceneObject, after: &SceneObject) -> Vec<Delta> {
    let id = after.id;
    let mut out = Vec::new();
    let keys: BTreeSet<&String> = before.material.keys().chain(after.material.keys()).collect();
    for name in keys {
        let (a, b) = (before.material.get(name), after.material.get(name));
        if a != b {
            out.push(Delta::SetMaterialProp {
                id,
                name: name.clone(),
                value: b.cloned(),
            });
        }
    }
    if before.name != after.name {
        out.push(Delta::Rename {
            id,
            name: after.name.clone(),
        });
    }
    let keys: BTreeSet<&String> = before.params.keys().chain(after.params.keys()).collect();
    for name in keys {
        let (a, b) = (before.params.get(name), after.params.get(name));
        if a != b {
            out.push(Delta::SetParam {
                id,
                name: name.clone(),
                value: b.cloned(),
            });
        }
    }
    if !before.transform.approx_eq(&after.transform) {
        out.push(Delta::SetTransform {
            id,
            transform: after.transform,
        });
    }
    out
}
