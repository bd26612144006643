use arco_core::annotation::LabelPalette;
use arco_core::canonical::Digest;
use arco_core::capture::MeshCaptureTimer;
use arco_core::geometry::{project, raycast, unproject, CameraIntrinsics, Pose, Quat, Ray, TriangleMesh, Vec3};
use arco_core::ids::{ObjectId, PeerId, RoomId, SessionId};
use arco_core::protocol::{coalesce, decode, encode, Message, WireEnvelope};
use arco_core::scene::{apply, diff, state_hash, Delta, ObjectTransform, ParamValue, SceneObject, SceneState};
use arco_core::state::{Replica, RoomState, Snapshot};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, any::<f64>().prop_filter("finite", |v| v.is_finite())]
}

fn unit_quat() -> impl Strategy<Value = Quat> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalized())
}

fn pose() -> impl Strategy<Value = Pose> {
    ((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), unit_quat()).prop_map(|((x, y, z), rotation)| Pose {
        position: Vec3::new(x, y, z),
        rotation,
    })
}

/// Plane intersection plus same-side edge tests; independent of the
/// library's Möller–Trumbore routine.
fn brute_force(meshes: &[TriangleMesh], ray: &Ray) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (mi, m) in meshes.iter().enumerate() {
        for ti in 0..m.triangles.len() {
            let [a, b, c] = m.triangle(ti);
            let n = (b - a).cross(c - a);
            let denom = n.dot(ray.direction);
            if denom.abs() < 1e-12 * n.norm() {
                continue;
            }
            let t = n.dot(a - ray.origin) / denom;
            if t <= 1e-9 {
                continue;
            }
            let p = ray.at(t);
            let inside = [(a, b), (b, c), (c, a)].iter().all(|&(u, v)| (v - u).cross(p - u).dot(n) >= -1e-12);
            if inside && best.is_none_or(|(_, _, bt)| t < bt) {
                best = Some((mi, ti, t));
            }
        }
    }
    best
}

fn random_scene(rng: &mut ChaCha8Rng, n: u128) -> SceneState {
    let mut s = SceneState::new();
    for i in 1..=n {
        let mut o = SceneObject::new(ObjectId(i), format!("o{i}"));
        if i > 1 && rng.random_bool(0.5) {
            o.parent = Some(ObjectId(rng.random_range(1..i)));
        }
        o.transform.position = Vec3::new(f64::from(rng.random_range(-8..8)), 0.5, 0.0);
        if rng.random_bool(0.3) {
            o.params.insert("k".into(), ParamValue::Int(rng.random_range(0..9)));
        }
        s.objects.insert(o.id, o);
    }
    s
}

/// Independent edit generator: touch, drop and add objects at random.
fn edited(prev: &SceneState, rng: &mut ChaCha8Rng, ops: usize) -> SceneState {
    let mut next = prev.clone();
    let mut fresh = next.objects.keys().map(|id| id.0).max().unwrap_or(0).max(1000);
    for _ in 0..ops {
        let ids: Vec<ObjectId> = next.objects.keys().copied().collect();
        match rng.random_range(0..5) {
            0 if !ids.is_empty() => {
                let id = ids[rng.random_range(0..ids.len())];
                let doomed = next.subtree(id);
                for d in doomed {
                    next.objects.remove(&d);
                }
            }
            1 => {
                fresh += 1;
                let mut o = SceneObject::new(ObjectId(fresh), "new");
                if !ids.is_empty() && rng.random_bool(0.5) {
                    o.parent = Some(ids[rng.random_range(0..ids.len())]);
                }
                next.objects.insert(o.id, o);
            }
            2 if !ids.is_empty() => {
                let id = ids[rng.random_range(0..ids.len())];
                next.objects.get_mut(&id).unwrap().transform = ObjectTransform {
                    position: Vec3::new(f64::from(rng.random_range(-8..8)), 2.0, 1.0),
                    rotation: Quat::from_axis_angle(Vec3::Y, f64::from(rng.random_range(0..8)) * 0.25),
                    scale: Vec3::new(1.0, 2.0, 1.0),
                };
            }
            3 if !ids.is_empty() => {
                let id = ids[rng.random_range(0..ids.len())];
                let o = next.objects.get_mut(&id).unwrap();
                o.name = format!("r{}", rng.random_range(0..100));
                o.params.insert("k".into(), ParamValue::Text("x".into()));
            }
            4 if ids.len() > 1 => {
                let id = ids[rng.random_range(0..ids.len())];
                let parent = ids[rng.random_range(0..ids.len())];
                if !next.is_ancestor_or_self(id, parent) {
                    next.objects.get_mut(&id).unwrap().parent = Some(parent);
                }
            }
            _ => {}
        }
    }
    next
}

fn env(seq: u64, body: Message) -> WireEnvelope {
    WireEnvelope::new(RoomId::new("r"), PeerId::new("p"), seq, seq, body)
}

proptest! {
    #[test]
    fn unproject_then_project_returns_pixel(
        u in 0.0..640.0f64,
        v in 0.0..480.0f64,
        depth in 0.05..20.0f64,
        camera in pose(),
    ) {
        let k = CameraIntrinsics::new(525.0, 520.0, 319.5, 239.5, 640, 480).unwrap();
        let p = unproject([u, v], depth, &k, &camera).unwrap();
        let back = project(p, &k, &camera).unwrap();
        prop_assert!((back[0] - u).abs() < 1e-6 && (back[1] - v).abs() < 1e-6);
    }

    #[test]
    fn raycast_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = || rng.random_range(-2.0..2.0f64);
        let meshes: Vec<TriangleMesh> = (0..3)
            .map(|_| {
                let vertices = (0..60).map(|_| Vec3::new(r(), r(), r() + 4.0)).collect();
                let triangles = (0..20).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
                TriangleMesh::new(vertices, triangles).unwrap()
            })
            .collect();
        for _ in 0..20 {
            let ray = Ray::new(Vec3::new(r() * 0.2, r() * 0.2, 0.0), Vec3::new(r() * 0.5, r() * 0.5, 1.0)).unwrap();
            let got = raycast(&meshes, &ray).map(|h| (h.mesh_index, h.triangle_index, h.t));
            let want = brute_force(&meshes, &ray);
            match (got, want) {
                (Some(g), Some(w)) => {
                    prop_assert_eq!((g.0, g.1), (w.0, w.1));
                    prop_assert!((g.2 - w.2).abs() < 1e-9);
                }
                (None, None) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
    }

    #[test]
    fn diff_then_apply_reaches_target(seed in any::<u64>(), n in 0u128..12, ops in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prev = random_scene(&mut rng, n);
        let next = edited(&prev, &mut rng, ops);
        let deltas = diff(&prev, &next);
        let applied = apply(&deltas, &prev);
        prop_assert!(applied.rejected.is_empty(), "{:?}", applied.rejected);
        prop_assert_eq!(state_hash(&applied.state), state_hash(&next));
        prop_assert!(diff(&next, &next).is_empty());
    }

    #[test]
    fn wire_round_trip_is_exact(x in finite(), y in finite(), name in "[a-zA-Z0-9 _\\-]{0,12}", seq in 1u64..1_000_000) {
        let body = Message::SceneDeltas {
            deltas: vec![
                Delta::SetTransform {
                    id: ObjectId(7),
                    transform: ObjectTransform { position: Vec3::new(x, y, 0.0), ..Default::default() },
                },
                Delta::SetParam { id: ObjectId(7), name: name.clone(), value: Some(ParamValue::Float(y)) },
                Delta::Rename { id: ObjectId(7), name },
            ],
        };
        let e = env(seq, body);
        let bytes = encode(&e);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &e);
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn late_joiner_snapshot_plus_tail_equals_full_fold(seed in any::<u64>(), len in 1usize..60, split in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let session = SessionId::new("s");
        let scenes: Vec<SceneState> = {
            let mut v = vec![SceneState::new()];
            for _ in 0..len {
                let next = edited(v.last().unwrap(), &mut rng, 3);
                v.push(next);
            }
            v
        };
        let stream: Vec<WireEnvelope> = scenes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut e = env(i as u64 + 1, Message::SceneDeltas { deltas: diff(&w[0], &w[1]) });
                e.server_seq = Some(i as u64 + 1);
                e
            })
            .collect();
        let split = split.min(stream.len());
        let mut full = RoomState::default();
        let mut prefix = RoomState::default();
        for (i, e) in stream.iter().enumerate() {
            full.fold(e, &session).unwrap();
            if i < split {
                prefix.fold(e, &session).unwrap();
            }
        }
        let mut replica = Replica::from_snapshot(&Snapshot {
            room: RoomId::new("r"),
            session_id: session.clone(),
            as_of: split as u64,
            state: prefix,
            peers: Vec::new(),
        });
        // Replaying the whole stream is harmless: covered records are skipped.
        for e in &stream {
            replica.apply(e).unwrap();
        }
        prop_assert_eq!(replica.hash(), full.hash());
        prop_assert_eq!(full.scene.objects.len(), scenes.last().unwrap().objects.len());
    }

    #[test]
    fn coalescing_keeps_only_the_last_write_per_key(count in 1usize..300) {
        let stream: Vec<WireEnvelope> = (0..count)
            .map(|i| env(i as u64 + 1, Message::SceneDeltas {
                deltas: vec![Delta::Rename { id: ObjectId(1), name: format!("n{i}") }],
            }))
            .collect();
        let out = coalesce(stream);
        prop_assert_eq!(out.len(), 1);
        let Message::SceneDeltas { deltas } = &out[0].body else { unreachable!() };
        prop_assert_eq!(deltas, &vec![Delta::Rename { id: ObjectId(1), name: format!("n{}", count - 1) }]);
    }

    #[test]
    fn mesh_timer_budget_is_exact(start in 0.0..1e5f64, elapsed in 0.0..30.0f64) {
        let timer = MeshCaptureTimer::default().start(start);
        let (after, stopped) = timer.tick(start + elapsed);
        prop_assert_eq!(after.is_capturing(), start + elapsed - start < 15.0);
        prop_assert_eq!(stopped.is_some(), !after.is_capturing());
    }

    #[test]
    fn label_colors_depend_only_on_label_order(labels in proptest::collection::btree_set("[a-z]{1,8}", 1..12)) {
        let labels: Vec<String> = labels.into_iter().filter(|l| l != "hazard").collect();
        let (mut a, mut b) = (LabelPalette::new(), LabelPalette::new());
        let ca: Vec<[u8; 3]> = labels.iter().map(|l| a.assign(l).unwrap()).collect();
        let cb: Vec<[u8; 3]> = labels.iter().map(|l| b.assign(l).unwrap()).collect();
        prop_assert_eq!(&ca, &cb);
        let again: Vec<[u8; 3]> = labels.iter().map(|l| a.assign(l).unwrap()).collect();
        prop_assert_eq!(&ca, &again);
    }
}

#[test]
fn digest_hex_round_trip() {
    let d = Digest::of(&SceneState::new());
    assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
}
