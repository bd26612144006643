//! Random scene edits, as an ex-situ author would make them. Values are
//! drawn from coarse grids so every change is well above the diff epsilons.

use arco_core::geometry::{Quat, Vec3};
use arco_core::ids::ObjectId;
use arco_core::scene::{MaterialValue, ObjectTransform, ParamValue, SceneObject, SceneState};
use rand::seq::IndexedRandom;
use rand::Rng;

const NAMES: [&str; 8] = ["bench", "sign", "lamp", "portal", "arrow", "plant", "kiosk", "marker"];
const MATERIAL_KEYS: [&str; 3] = ["albedo", "roughness", "texture"];
const PARAM_KEYS: [&str; 4] = ["visible", "count", "speed", "label"];

fn grid<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    f64::from(rng.random_range(-20i32..=20)) * 0.25
}

fn grid_vec<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(grid(rng), grid(rng), grid(rng))
}

fn rotation<R: Rng + ?Sized>(rng: &mut R) -> Quat {
    let axis = *[Vec3::X, Vec3::Y, Vec3::Z].choose(rng).expect("non-empty");
    let steps = rng.random_range(0..24);
    Quat::from_axis_angle(axis, f64::from(steps) * std::f64::consts::PI / 12.0)
}

fn scale<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let s = [0.5, 1.0, 1.5, 2.0];
    Vec3::new(*s.choose(rng).expect("non-empty"), *s.choose(rng).expect("non-empty"), *s.choose(rng).expect("non-empty"))
}

fn material<R: Rng + ?Sized>(key: &str, rng: &mut R) -> MaterialValue {
    match key {
        "albedo" => MaterialValue::Color([0, 1, 2, 3].map(|_| f64::from(rng.random_range(0u8..=4)) / 4.0)),
        "roughness" => MaterialValue::Scalar(f64::from(rng.random_range(0u8..=10)) / 10.0),
        _ => MaterialValue::Texture(format!("tex_{}", rng.random_range(0u8..5))),
    }
}

fn param<R: Rng + ?Sized>(key: &str, rng: &mut R) -> ParamValue {
    match key {
        "visible" => ParamValue::Bool(rng.random()),
        "count" => ParamValue::Int(rng.random_range(-5..50)),
        "speed" => ParamValue::Float(grid(rng)),
        _ => ParamValue::Text(NAMES.choose(rng).expect("non-empty").to_string()),
    }
}

fn pick<R: Rng + ?Sized>(scene: &SceneState, rng: &mut R) -> Option<ObjectId> {
    let ids: Vec<ObjectId> = scene.objects.keys().copied().collect();
    ids.choose(rng).copied()
}

/// Applies one random edit in place.
pub fn mutate<R: Rng + ?Sized>(scene: &mut SceneState, rng: &mut R) {
    let op = if scene.objects.is_empty() { 0 } else { rng.random_range(0..10) };
    match op {
        0 | 1 => {
            let id = ObjectId::random(rng);
            let mut obj = SceneObject::new(id, *NAMES.choose(rng).expect("non-empty"));
            obj.transform = ObjectTransform {
                position: grid_vec(rng),
                rotation: rotation(rng),
                scale: scale(rng),
            };
            if rng.random_bool(0.3) {
                obj.parent = pick(scene, rng);
            }
            scene.objects.insert(id, obj);
        }
        2 => {
            if let Some(id) = pick(scene, rng) {
                for gone in scene.subtree(id) {
                    scene.objects.remove(&gone);
                }
            }
        }
        3 => {
            if let Some(o) = pick(scene, rng).and_then(|id| scene.objects.get_mut(&id)) {
                o.transform.position = grid_vec(rng);
            }
        }
        4 => {
            if let Some(o) = pick(scene, rng).and_then(|id| scene.objects.get_mut(&id)) {
                o.transform.rotation = rotation(rng);
                o.transform.scale = scale(rng);
            }
        }
        5 => {
            if let Some(o) = pick(scene, rng).and_then(|id| scene.objects.get_mut(&id)) {
                let key = *MATERIAL_KEYS.choose(rng).expect("non-empty");
                if rng.random_bool(0.25) {
                    o.material.remove(key);
                } else {
                    o.material.insert(key.into(), material(key, rng));
                }
            }
        }
        6 | 7 => {
            if let Some(o) = pick(scene, rng).and_then(|id| scene.objects.get_mut(&id)) {
                let key = *PARAM_KEYS.choose(rng).expect("non-empty");
                if rng.random_bool(0.25) {
                    o.params.remove(key);
                } else {
                    o.params.insert(key.into(), param(key, rng));
                }
            }
        }
        8 => {
            if let Some(o) = pick(scene, rng).and_then(|id| scene.objects.get_mut(&id)) {
                o.name = format!("{}_{}", NAMES.choose(rng).expect("non-empty"), rng.random_range(0..100));
            }
        }
        _ => {
            if let Some(id) = pick(scene, rng) {
                let candidate = if rng.random_bool(0.2) { None } else { pick(scene, rng) };
                let parent = candidate.filter(|p| !scene.is_ancestor_or_self(id, *p));
                if let Some(o) = scene.objects.get_mut(&id) {
                    o.parent = parent;
                }
            }
        }
    }
}

/// `ops` random edits applied to a copy of `scene`.
pub fn random_script<R: Rng + ?Sized>(scene: &SceneState, ops: usize, rng: &mut R) -> SceneState {
    let mut next = scene.clone();
    for _ in 0..ops {
        mutate(&mut next, rng);
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scripts_keep_scene_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = SceneState::default();
        for _ in 0..50 {
            s = random_script(&s, 20, &mut rng);
            s.validate().unwrap();
        }
    }
}
