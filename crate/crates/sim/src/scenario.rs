//! Seeded synthetic sessions over the built-in site: one or more in-situ
//! devices walking a fixed set of viewpoints and ex-situ editors working on
//! the shared scene.

use std::collections::BTreeMap;
use std::sync::Arc;

use arco_core::geometry::{CameraIntrinsics, Pose, Quat, RigidTransform, TriangleMesh, Vec3};
use arco_core::ids::{PeerId, RoomId, TimestampMs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::ExAction;
use crate::harness::{ExScript, Scenario, TimedExAction};
use crate::synth::{default_site, SynthSpec};
use crate::trace::{Action, Assets, LoadedTrace, TimedAction, Trace, TraceHeader, TRACE_VERSION};

pub const SYNTH_BASE_TIME: TimestampMs = 1_760_000_000_000;
const SITE_MESH: &str = "site.obj";
const LABELS: [&str; 4] = ["hazard", "user flow", "outlet", "seating"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub seed: u64,
    /// Scripted actions across all peers, localization steps included.
    pub actions: usize,
    pub in_situ_peers: usize,
    pub ex_situ_peers: usize,
    /// Gap between consecutive actions of one peer.
    pub spacing_ms: u64,
    /// When false, in-situ devices never confirm an alignment.
    pub confirm: bool,
    /// Let in-situ devices drop and rejoin now and then.
    pub reconnects: bool,
    pub viewpoints: usize,
    pub width: u32,
    pub height: u32,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            actions: 200,
            in_situ_peers: 1,
            ex_situ_peers: 1,
            spacing_ms: 40,
            confirm: true,
            reconnects: false,
            viewpoints: 8,
            width: 64,
            height: 48,
        }
    }
}

/// Device→anchor alignment the synthetic devices localize to.
pub fn synth_alignment() -> RigidTransform {
    RigidTransform {
        position: Vec3::new(0.3, -0.1, 0.2),
        rotation: Quat::from_axis_angle(Vec3::Y, 0.2),
    }
}

fn merge(meshes: Vec<TriangleMesh>) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for m in meshes {
        let base = vertices.len() as u32;
        vertices.extend(m.vertices);
        triangles.extend(m.triangles.into_iter().map(|t| t.map(|i| i + base)));
    }
    TriangleMesh::new(vertices, triangles).expect("merged indices are in range")
}

/// Renders the viewpoints once and packages them as trace assets. Returns the
/// anchor-frame camera poses.
fn site_assets(spec: &SynthSpec, intrinsics: &CameraIntrinsics, block_size: f64, rng: &mut ChaCha8Rng, n: usize) -> (Assets, Vec<Pose>, Vec<(arco_core::capture::BlockKey, String)>) {
    let mut assets = Assets::default();
    let mut poses = Vec::new();
    for k in 0..n.max(1) {
        let pose = Pose {
            position: Vec3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.1..0.1), rng.random_range(0.0..0.5)),
            rotation: Quat::from_axis_angle(Vec3::Y, rng.random_range(-0.15..0.15)),
        };
        let r = spec.render(intrinsics, &pose);
        assets.depth.insert(format!("frames/depth_{k}.pgm"), r.depth_image());
        assets.color.insert(format!("frames/color_{k}.ppm"), r.color);
        poses.push(pose);
    }
    assets.meshes.insert(SITE_MESH.to_owned(), merge(spec.tessellate(0.5)));
    let mut blocks = Vec::new();
    for (key, mesh) in spec.mesh_blocks(block_size) {
        let name = format!("blocks/{}", key.obj_file_name());
        assets.meshes.insert(name.clone(), mesh);
        blocks.push((key, name));
    }
    (assets, poses, blocks)
}

fn in_situ_trace(opts: &ScenarioOptions, peer: usize, count: usize, rng: &mut ChaCha8Rng) -> LoadedTrace {
    let intrinsics = CameraIntrinsics::from_fov(opts.width, opts.height, 1.2);
    let block_size = 1.0;
    let (assets, poses, blocks) = site_assets(&default_site(), &intrinsics, block_size, rng, opts.viewpoints);
    let to_local = synth_alignment().inverse();
    let local = |k: usize| to_local.compose(&poses[k]);
    let (w, h) = (f64::from(opts.width), f64::from(opts.height));

    let mut actions = Vec::new();
    let mut at = 0;
    let mut push = |actions: &mut Vec<TimedAction>, action: Action| {
        actions.push(TimedAction { at_ms: at, action });
        at += opts.spacing_ms;
    };
    push(&mut actions, Action::Restart);
    push(&mut actions, Action::OfferCandidate { index: 0 });
    if opts.confirm {
        push(&mut actions, Action::Confirm { alignment: None });
    }
    let mut k = 0;
    push(&mut actions, Action::Move { pose: local(k) });
    let mut connected = true;
    while actions.len() < count {
        let frame = |k: usize| (format!("frames/depth_{k}.pgm"), format!("frames/color_{k}.ppm"));
        let roll = rng.random_range(0..100);
        let action = match roll {
            0..15 => {
                k = rng.random_range(0..poses.len());
                Action::Move { pose: local(k) }
            }
            15..25 => {
                let (depth, color) = frame(k);
                Action::Frame { depth, color }
            }
            25..30 => {
                let (depth, color) = frame(k);
                Action::Snapshot { depth, color }
            }
            30..33 => Action::StartMeshCapture,
            33..48 => {
                let (key, mesh) = blocks[rng.random_range(0..blocks.len())].clone();
                Action::MeshBlock { key, mesh }
            }
            48..58 => Action::SurfacePoint {
                pixel: [rng.random_range(0.0..w), rng.random_range(0.0..h)],
            },
            58..68 => {
                k = (k + 1) % poses.len();
                push(&mut actions, Action::Move { pose: local(k) });
                Action::AirPoint
            }
            68..74 => Action::Label {
                text: rng.random_bool(0.7).then(|| LABELS[rng.random_range(0..LABELS.len())].to_owned()),
            },
            74..89 => Action::CursorAt {
                pixel: [rng.random_range(0.0..w), rng.random_range(0.0..h)],
            },
            89..95 => Action::Marker,
            _ if opts.reconnects && connected => {
                connected = false;
                Action::Disconnect
            }
            _ if opts.reconnects => {
                connected = true;
                Action::Reconnect
            }
            _ => Action::CursorAt { pixel: [w / 2.0, h / 2.0] },
        };
        push(&mut actions, action);
    }
    actions.truncate(count);
    if !connected && opts.reconnects {
        if let Some(last) = actions.last_mut() {
            last.action = Action::Reconnect;
        }
    }
    LoadedTrace {
        trace: Trace {
            trace_version: TRACE_VERSION,
            header: TraceHeader {
                peer: PeerId::new(format!("device-{peer}")),
                intrinsics,
                candidates: vec![synth_alignment()],
                base_time: SYNTH_BASE_TIME,
                location_mesh: Some(SITE_MESH.to_owned()),
                block_size,
                stride: 4,
            },
            actions,
        },
        assets,
    }
}

fn ex_situ_script(opts: &ScenarioOptions, peer: usize, count: usize, rng: &mut ChaCha8Rng) -> ExScript {
    let (w, h) = (f64::from(opts.width), f64::from(opts.height));
    // Start after the devices have localized so hovers have a live view.
    let start = 4 * opts.spacing_ms + opts.spacing_ms / 2;
    let actions = (0..count)
        .map(|i| {
            let action = match rng.random_range(0..100) {
                0..50 => ExAction::Edit,
                50..75 => ExAction::Hover {
                    pixel: [rng.random_range(0.0..w), rng.random_range(0.0..h)],
                },
                75..85 => ExAction::Marker,
                85..90 => ExAction::Screenshot,
                _ => ExAction::Opacity {
                    value: f64::from(rng.random_range(0..=10u8)) / 10.0,
                },
            };
            TimedExAction {
                at_ms: start + i as u64 * opts.spacing_ms,
                action,
            }
        })
        .collect();
    ExScript {
        peer: PeerId::new(format!("editor-{peer}")),
        actions,
    }
}

/// Builds a deterministic scenario from `opts`.
pub fn synth_scenario(room: RoomId, opts: &ScenarioOptions) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let peers = opts.in_situ_peers + opts.ex_situ_peers;
    let mut budgets: BTreeMap<usize, usize> = (0..peers).map(|p| (p, opts.actions / peers.max(1))).collect();
    if let Some(first) = budgets.get_mut(&0) {
        *first += opts.actions - opts.actions / peers.max(1) * peers;
    }
    let in_situ: Vec<Arc<LoadedTrace>> = (0..opts.in_situ_peers)
        .map(|p| Arc::new(in_situ_trace(opts, p, budgets[&p], &mut rng)))
        .collect();
    let ex_situ = (0..opts.ex_situ_peers)
        .map(|p| ex_situ_script(opts, p, budgets[&(opts.in_situ_peers + p)], &mut rng))
        .collect();
    let site = in_situ
        .first()
        .and_then(|t| t.assets.meshes.get(SITE_MESH).cloned())
        .or_else(|| Some(merge(default_site().tessellate(0.5))));
    Scenario {
        room,
        base_time: SYNTH_BASE_TIME,
        in_situ,
        ex_situ,
        site,
    }
}
