//! Desk-scale synthetic site: analytic planes and boxes rendered into
//! z-depth and color frames, and tessellated into block-keyed meshes.

use std::collections::BTreeMap;

use arco_core::capture::{BlockKey, ColorFrame};
use arco_core::geometry::{pixel_ray, CameraIntrinsics, Pose, Ray, TriangleMesh, Vec3};
use serde::{Deserialize, Serialize};

use crate::frames::DepthImage;

/// A plane through `point`. With `half_extent`, only the square patch of
/// that half-size centered on `point` exists.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPlane {
    pub point: Vec3,
    pub normal: Vec3,
    pub half_extent: Option<f64>,
    pub color: [u8; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthBox {
    pub min: Vec3,
    pub max: Vec3,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub planes: Vec<SynthPlane>,
    pub boxes: Vec<SynthBox>,
}

/// Rendered view of a [`SynthSpec`]. Depth is z-depth in meters, `NaN`
/// where nothing was hit.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub depth: Vec<f64>,
    pub color: ColorFrame,
}

impl Rendered {
    pub fn depth_image(&self) -> DepthImage {
        DepthImage::from_meters(self.color.width, self.color.height, &self.depth)
    }
}

fn plane_basis(n: Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    let u = n.cross(helper).normalized().expect("normal is non-zero");
    (u, n.cross(u))
}

impl SynthPlane {
    fn unit_normal(&self) -> Vec3 {
        self.normal.normalized().expect("plane normal must be non-zero")
    }

    /// Ray parameter of the hit, if any.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let n = self.unit_normal();
        let denom = ray.direction.dot(n);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.point - ray.origin).dot(n) / denom;
        if t <= 0.0 {
            return None;
        }
        if let Some(e) = self.half_extent {
            let (u, v) = plane_basis(n);
            let rel = ray.at(t) - self.point;
            if rel.dot(u).abs() > e || rel.dot(v).abs() > e {
                return None;
            }
        }
        Some(t)
    }
}

impl SynthBox {
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..3 {
            let (o, d) = (ray.origin[i], ray.direction[i]);
            if d.abs() < 1e-15 {
                if o < self.min[i] || o > self.max[i] {
                    return None;
                }
                continue;
            }
            let (a, b) = ((self.min[i] - o) / d, (self.max[i] - o) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        if t0 > t1 || t1 <= 0.0 {
            return None;
        }
        Some(if t0 > 0.0 { t0 } else { t1 })
    }
}

impl SynthSpec {
    pub fn is_empty(&self) -> bool {
        self.planes.is_empty() && self.boxes.is_empty()
    }

    /// Nearest hit: ray parameter and surface color.
    pub fn trace(&self, ray: &Ray) -> Option<(f64, [u8; 3])> {
        let planes = self.planes.iter().filter_map(|p| p.intersect(ray).map(|t| (t, p.color)));
        let boxes = self.boxes.iter().filter_map(|b| b.intersect(ray).map(|t| (t, b.color)));
        planes.chain(boxes).min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Renders the view from `camera_pose` (anchor frame). Pixels are sampled
    /// at integer coordinates, matching how depth frames are unprojected.
    pub fn render(&self, intrinsics: &CameraIntrinsics, camera_pose: &Pose) -> Rendered {
        let (w, h) = (intrinsics.width, intrinsics.height);
        let forward = camera_pose.apply_vector(Vec3::Z);
        let mut depth = Vec::with_capacity((w * h) as usize);
        let mut rgb = Vec::with_capacity((3 * w * h) as usize);
        for v in 0..h {
            for u in 0..w {
                let ray = pixel_ray([f64::from(u), f64::from(v)], intrinsics, camera_pose);
                match self.trace(&ray) {
                    Some((t, c)) => {
                        depth.push(t * ray.direction.dot(forward));
                        rgb.extend_from_slice(&c);
                    }
                    None => {
                        depth.push(f64::NAN);
                        rgb.extend_from_slice(&[0, 0, 0]);
                    }
                }
            }
        }
        Rendered {
            depth,
            color: ColorFrame { width: w, height: h, rgb },
        }
    }

    /// All finite geometry as triangles, at most `cell` on a side.
    pub fn tessellate(&self, cell: f64) -> Vec<TriangleMesh> {
        let mut out = Vec::new();
        for p in &self.planes {
            let Some(e) = p.half_extent else { continue };
            let (u, v) = plane_basis(p.unit_normal());
            out.push(quad_grid(p.point - u * e - v * e, u * (2.0 * e), v * (2.0 * e), cell));
        }
        for b in &self.boxes {
            let d = b.max - b.min;
            let (dx, dy, dz) = (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, d.z));
            for (origin, a, c) in [
                (b.min, dy, dx),
                (b.min + dz, dx, dy),
                (b.min, dz, dy),
                (b.min + dx, dy, dz),
                (b.min, dx, dz),
                (b.min + dy, dz, dx),
            ] {
                out.push(quad_grid(origin, a, c, cell));
            }
        }
        out
    }

    /// Geometry split into blocks by the grid cell containing each triangle's
    /// centroid. Triangles are no larger than half a block, so every vertex
    /// stays inside its block's padded bounds.
    pub fn mesh_blocks(&self, block_size: f64) -> BTreeMap<BlockKey, TriangleMesh> {
        let mut buckets: BTreeMap<BlockKey, (Vec<Vec3>, Vec<[u32; 3]>)> = BTreeMap::new();
        for mesh in self.tessellate(block_size / 2.0) {
            for t in &mesh.triangles {
                let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                let key = BlockKey::containing((a + b + c) / 3.0, block_size);
                let (verts, tris) = buckets.entry(key).or_default();
                let base = verts.len() as u32;
                verts.extend([a, b, c]);
                tris.push([base, base + 1, base + 2]);
            }
        }
        buckets
            .into_iter()
            .map(|(k, (v, t))| (k, TriangleMesh::new(v, t).expect("tessellation is valid")))
            .collect()
    }
}

/// Parallelogram `origin + s·a + t·b`, s,t ∈ [0,1], split into cells.
fn quad_grid(origin: Vec3, a: Vec3, b: Vec3, cell: f64) -> TriangleMesh {
    let na = (a.norm() / cell).ceil().max(1.0) as u32;
    let nb = (b.norm() / cell).ceil().max(1.0) as u32;
    let mut vertices = Vec::new();
    for j in 0..=nb {
        for i in 0..=na {
            vertices.push(origin + a * (f64::from(i) / f64::from(na)) + b * (f64::from(j) / f64::from(nb)));
        }
    }
    let idx = |i: u32, j: u32| j * (na + 1) + i;
    let mut triangles = Vec::new();
    for j in 0..nb {
        for i in 0..na {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, triangles).expect("grid indices are in range")
}

/// A wall, a floor patch and a bench-sized box in front of the origin.
pub fn default_site() -> SynthSpec {
    SynthSpec {
        planes: vec![
            SynthPlane {
                point: Vec3::new(0.0, 0.0, 4.0),
                normal: Vec3::new(0.0, 0.0, -1.0),
                half_extent: Some(3.0),
                color: [180, 170, 160],
            },
            SynthPlane {
                point: Vec3::new(0.0, 1.2, 2.5),
                normal: Vec3::new(0.0, -1.0, 0.0),
                half_extent: Some(2.5),
                color: [90, 110, 80],
            },
        ],
        boxes: vec![SynthBox {
            min: Vec3::new(-0.5, 0.4, 2.0),
            max: Vec3::new(0.5, 1.2, 2.8),
            color: [200, 60, 40],
        }],
    }
}
