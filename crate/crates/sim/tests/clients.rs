use std::sync::Arc;

use arco_core::capture::BlockKey;
use arco_core::geometry::{CameraIntrinsics, CameraView, Pose, Quat, Ray, RigidTransform, Vec3};
use arco_core::ids::{PeerRole, RoomId, SessionId, TimestampMs};
use arco_core::protocol::{FlushPolicy, Message, WireEnvelope};
use arco_core::state::RoomState;
use arco_relay::Room;
use arco_sim::client::InSituClient;
use arco_sim::frames::DepthImage;
use arco_sim::synth::{SynthBox, SynthPlane, SynthSpec};
use arco_sim::trace::{Action, Assets, LoadedTrace, Trace, TraceHeader, TRACE_VERSION};

const BASE: TimestampMs = 1_000_000;

fn alignment() -> RigidTransform {
    RigidTransform {
        position: Vec3::new(0.2, -0.05, 0.1),
        rotation: Quat::from_axis_angle(Vec3::Y, 0.1),
    }
}

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::from_fov(64, 48, 1.1)
}

fn box_spec() -> SynthSpec {
    SynthSpec {
        planes: vec![SynthPlane {
            point: Vec3::new(0.0, 0.0, 3.0),
            normal: Vec3::new(0.0, 0.0, -1.0),
            half_extent: Some(4.0),
            color: [200, 200, 200],
        }],
        boxes: vec![SynthBox {
            min: Vec3::new(-0.3, -0.3, 1.5),
            max: Vec3::new(0.5, 0.4, 2.0),
            color: [220, 40, 40],
        }],
    }
}

/// One viewpoint: the device sits at its local origin, which the alignment
/// maps to `alignment()` in the anchor frame.
fn loaded(spec: &SynthSpec) -> Arc<LoadedTrace> {
    let rendered = spec.render(&intrinsics(), &alignment());
    let mut assets = Assets::default();
    assets.depth.insert("d.pgm".into(), rendered.depth_image());
    assets.color.insert("c.ppm".into(), rendered.color);
    let site = spec.tessellate(0.25);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for m in site {
        let base = vertices.len() as u32;
        vertices.extend(m.vertices);
        triangles.extend(m.triangles.into_iter().map(|t| t.map(|i| i + base)));
    }
    assets
        .meshes
        .insert("site.obj".into(), arco_core::geometry::TriangleMesh::new(vertices, triangles).unwrap());
    for (key, mesh) in spec.mesh_blocks(1.0) {
        assets.meshes.insert(format!("b/{}", key.obj_file_name()), mesh);
    }
    Arc::new(LoadedTrace {
        trace: Trace {
            trace_version: TRACE_VERSION,
            header: TraceHeader {
                peer: "device".into(),
                intrinsics: intrinsics(),
                candidates: vec![alignment()],
                base_time: BASE,
                location_mesh: Some("site.obj".into()),
                block_size: 1.0,
                stride: 4,
            },
            actions: Vec::new(),
        },
        assets,
    })
}

/// A device joined to an in-memory room, with its traffic looped through it.
struct Rig {
    room: Room,
    client: InSituClient,
    sent: Vec<WireEnvelope>,
}

impl Rig {
    fn new(spec: &SynthSpec) -> Rig {
        let mut room = Room::new(RoomId::new("r"), SessionId::new("s1"), RoomState::default());
        let mut client = InSituClient::new(RoomId::new("r"), loaded(spec), FlushPolicy::default(), 1);
        let joined = room.join("device".into(), PeerRole::InSitu, BASE).unwrap();
        for o in joined.outbound {
            client.core.receive(&o.envelope).unwrap();
        }
        client.on_snapshot(BASE).unwrap();
        Rig {
            room,
            client,
            sent: Vec::new(),
        }
    }

    fn act(&mut self, at_ms: u64, action: Action) {
        let now = BASE + at_ms;
        self.client.tick(now);
        self.client.act(&action, now).unwrap();
        self.pump(now);
    }

    fn pump(&mut self, now: TimestampMs) {
        for env in self.client.core.flush_all() {
            self.sent.push(env.clone());
            if let Ok(routed) = self.room.route(env, now) {
                for o in routed.outbound {
                    self.client.core.receive(&o.envelope).unwrap();
                }
            }
        }
    }

    fn localize(&mut self) {
        self.act(0, Action::Restart);
        self.act(10, Action::OfferCandidate { index: 0 });
        self.act(20, Action::Confirm { alignment: None });
    }

    fn kinds(&self, kind: &str) -> Vec<&Message> {
        self.sent.iter().map(|e| &e.body).filter(|b| b.kind() == kind).collect()
    }
}

fn frame() -> Action {
    Action::Snapshot {
        depth: "d.pgm".into(),
        color: "c.ppm".into(),
    }
}

#[test]
fn plane_depth_matches_analytic_distance() {
    let spec = SynthSpec {
        planes: vec![SynthPlane {
            point: Vec3::new(0.0, 0.0, 2.0),
            normal: Vec3::new(0.0, 0.0, -1.0),
            half_extent: None,
            color: [1, 2, 3],
        }],
        boxes: Vec::new(),
    };
    let r = spec.render(&intrinsics(), &Pose::IDENTITY);
    assert!(r.depth.iter().all(|d| (d - 2.0).abs() < 1e-12));
    let pgm = r.depth_image().to_pgm();
    let back = DepthImage::from_pgm(&pgm).unwrap();
    assert!(back.mm.iter().all(|&mm| mm == 2000));
}

#[test]
fn snapshot_points_lie_on_the_site() {
    let spec = box_spec();
    let mut rig = Rig::new(&spec);
    rig.localize();
    rig.act(3000, frame());
    let clouds = rig.kinds("capture_cloud");
    assert_eq!(clouds.len(), 1);
    let Message::CaptureCloud { cloud } = clouds[0] else { unreachable!() };
    assert_eq!(cloud.created_at, BASE + 3000);
    assert_eq!(cloud.points.len(), 16 * 12);
    let origin = alignment().position;
    for p in &cloud.points {
        let ray = Ray::new(origin, *p - origin).unwrap();
        let (t, _) = spec.trace(&ray).unwrap();
        // Depth is stored in whole millimeters.
        assert!((t - p.distance(origin)).abs() < 2e-3, "{p:?}");
    }
}

#[test]
fn cursor_lands_on_box_face() {
    let spec = box_spec();
    let mut rig = Rig::new(&spec);
    rig.localize();
    for pixel in [[32.0, 24.0], [20.5, 17.25], [40.0, 30.0], [2.0, 3.0]] {
        rig.act(100, Action::CursorAt { pixel });
        let Some(Message::CursorLive { cursor }) = rig.kinds("cursor_live").last().copied() else {
            panic!("no cursor sent");
        };
        let ray = CameraView {
            pose: alignment(),
            intrinsics: intrinsics(),
        }
        .ray(pixel);
        let (t, _) = spec.trace(&ray).unwrap();
        assert!(cursor.position.max_abs_diff(ray.at(t)) < 1e-6, "{pixel:?}");
        assert!(cursor.normal.is_some());
    }
}

#[test]
fn nothing_is_shared_before_confirmation() {
    let spec = box_spec();
    let mut rig = Rig::new(&spec);
    rig.act(0, Action::Restart);
    rig.act(10, Action::OfferCandidate { index: 0 });
    rig.act(20, frame());
    rig.act(30, Action::StartMeshCapture);
    rig.act(40, Action::SurfacePoint { pixel: [10.0, 10.0] });
    rig.act(50, Action::AirPoint);
    rig.act(60, Action::Label { text: Some("hazard".into()) });
    rig.act(70, Action::CursorAt { pixel: [10.0, 10.0] });
    rig.act(80, Action::Marker);
    for kind in ["capture_cloud", "mesh_block_update", "annotation_add", "cursor_live", "cursor_marker"] {
        assert!(rig.kinds(kind).is_empty(), "{kind} leaked");
    }
    assert!(rig.client.core.stats.gated >= 6);
    assert_eq!(rig.kinds("localization_event").len(), 2);
}

#[test]
fn mesh_capture_stops_at_fifteen_seconds() {
    let spec = box_spec();
    let mut rig = Rig::new(&spec);
    rig.localize();
    let (key, name) = spec
        .mesh_blocks(1.0)
        .into_keys()
        .map(|k| (k, format!("b/{}", k.obj_file_name())))
        .next()
        .unwrap();
    let block = |key: BlockKey| Action::MeshBlock {
        key,
        mesh: name.clone(),
    };
    rig.act(1000, Action::StartMeshCapture);
    rig.act(1000 + 14_999, block(key));
    assert_eq!(rig.kinds("mesh_block_update").len(), 1);
    rig.act(1000 + 15_000, block(key));
    assert_eq!(rig.kinds("mesh_block_update").len(), 1);
    assert_eq!(rig.kinds("capture_stopped").len(), 1);
    assert_eq!(rig.client.core.stats.idle_blocks, 1);

    // A restart gets a fresh budget under a new capture id.
    rig.act(20_000, Action::StartMeshCapture);
    rig.act(34_999, block(key));
    assert_eq!(rig.kinds("mesh_block_update").len(), 2);
    assert_eq!(rig.room.state().meshes.len(), 2);
}

#[test]
fn labeled_strokes_carry_palette_colors() {
    let spec = box_spec();
    let mut rig = Rig::new(&spec);
    rig.localize();
    rig.act(100, frame());
    for (i, px) in [[10.0, 10.0], [30.0, 20.0], [50.0, 40.0]].into_iter().enumerate() {
        rig.act(200 + i as u64, Action::SurfacePoint { pixel: px });
    }
    rig.act(300, Action::Label { text: Some("hazard".into()) });
    let adds = rig.kinds("annotation_add");
    assert_eq!(adds.len(), 1);
    let Message::AnnotationAdd { annotation } = adds[0] else { unreachable!() };
    assert_eq!(annotation.points.len(), 3);
    assert_eq!(annotation.color, arco_core::annotation::HAZARD_COLOR);
    assert_eq!(rig.room.state().annotations.len(), 1);
}
