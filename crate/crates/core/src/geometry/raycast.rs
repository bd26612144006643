use serde::{Deserialize, Serialize};

use super::{TriangleMesh, Vec3};

/// Tolerance on `t` and barycentric coordinates.
pub const RAY_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`. `None` for a zero direction.
    pub fn new(origin: Vec3, direction: Vec3) -> Option<Ray> {
        Some(Ray {
            origin,
            direction: direction.normalized()?,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    /// Geometric triangle normal, oriented against the ray.
    pub normal: Vec3,
    pub mesh_index: usize,
    pub triangle_index: usize,
    pub t: f64,
}

impl Hit {
    /// Ordering used to pick the nearest hit: smaller `t`, then lower
    /// `(mesh_index, triangle_index)` when the distances tie within epsilon.
    pub fn beats(&self, other: &Hit) -> bool {
        if self.t < other.t - RAY_EPSILON {
            true
        } else if self.t > other.t + RAY_EPSILON {
            false
        } else {
            (self.mesh_index, self.triangle_index) < (other.mesh_index, other.triangle_index)
        }
    }
}

/// Möller–Trumbore. Returns `(t, normal)` for hits with `t > ε`; rays parallel
/// to the plane and zero-area triangles never hit.
pub fn intersect_triangle(ray: &Ray, [a, b, c]: [Vec3; 3]) -> Option<(f64, Vec3)> {
    let e1 = b - a;
    let e2 = c - a;
    let n = e1.cross(e2);
    let n_len = n.norm();
    if !(n_len > 1e-18) {
        return None;
    }
    let p = ray.direction.cross(e2);
    let det = e1.dot(p);
    if det.abs() <= 1e-12 * n_len {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(p) * inv;
    if u < -RAY_EPSILON || u > 1.0 + RAY_EPSILON {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.direction.dot(q) * inv;
    if v < -RAY_EPSILON || u + v > 1.0 + RAY_EPSILON {
        return None;
    }
    let t = e2.dot(q) * inv;
    if t <= RAY_EPSILON {
        return None;
    }
    let mut normal = n / n_len;
    if normal.dot(ray.direction) > 0.0 {
        normal = -normal;
    }
    Some((t, normal))
}

fn consider(best: &mut Option<Hit>, cand: Hit) {
    match best {
        Some(b) if !cand.beats(b) => {}
        _ => *best = Some(cand),
    }
}

/// Nearest hit across all meshes by linear scan.
pub fn raycast(meshes: &[TriangleMesh], ray: &Ray) -> Option<Hit> {
    let mut best = None;
    for (mi, mesh) in meshes.iter().enumerate() {
        for ti in 0..mesh.triangles.len() {
            if let Some((t, normal)) = intersect_triangle(ray, mesh.triangle(ti)) {
                consider(
                    &mut best,
                    Hit {
                        point: ray.at(t),
                        normal,
                        mesh_index: mi,
                        triangle_index: ti,
                        t,
                    },
                );
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Vec3) {
        self.lo = self.lo.min(p);
        self.hi = self.hi.max(p);
    }

    /// Entry distance of the ray into the (slightly padded) box.
    fn entry(&self, origin: Vec3, inv_dir: Vec3, t_max: f64) -> Option<f64> {
        let pad = 1e-9;
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for axis in 0..3 {
            let lo = self.lo[axis] - pad;
            let hi = self.hi[axis] + pad;
            let o = origin[axis];
            let inv = inv_dir[axis];
            if inv.is_infinite() {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((lo - o) * inv, (hi - o) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct MeshBvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl MeshBvh {
    fn build(mesh: &TriangleMesh) -> MeshBvh {
        let centroids: Vec<Vec3> = (0..mesh.triangles.len())
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                (a + b + c) / 3.0
            })
            .collect();
        let mut order: Vec<u32> = (0..mesh.triangles.len() as u32).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            let len = order.len();
            Self::build_node(mesh, &centroids, &mut order, 0, len, &mut nodes);
        }
        MeshBvh { nodes, order }
    }

    fn build_node(
        mesh: &TriangleMesh,
        centroids: &[Vec3],
        order: &mut [u32],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &ti in &order[start..end] {
            for v in mesh.triangle(ti as usize) {
                bounds.grow(v);
            }
            cbounds.grow(centroids[ti as usize]);
        }
        let idx = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, start, end });
            return idx;
        }
        let extent = cbounds.hi - cbounds.lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        nodes.push(Node::Leaf { bounds, start, end });
        let left = Self::build_node(mesh, centroids, order, start, mid, nodes);
        let right = Self::build_node(mesh, centroids, order, mid, end, nodes);
        nodes[idx] = Node::Inner { bounds, left, right };
        idx
    }
}

/// Anything a ray can be cast against.
pub trait RaycastTarget {
    fn raycast(&self, ray: &Ray) -> Option<Hit>;
}

impl RaycastTarget for [TriangleMesh] {
    fn raycast(&self, ray: &Ray) -> Option<Hit> {
        raycast(self, ray)
    }
}

impl RaycastTarget for Vec<TriangleMesh> {
    fn raycast(&self, ray: &Ray) -> Option<Hit> {
        raycast(self, ray)
    }
}

impl RaycastTarget for MeshIndex {
    fn raycast(&self, ray: &Ray) -> Option<Hit> {
        MeshIndex::raycast(self, ray)
    }
}

/// Raycast accelerator over a fixed set of meshes. Results are identical to
/// [`raycast`], which remains the reference.
#[derive(Clone, Debug)]
pub struct MeshIndex {
    meshes: Vec<TriangleMesh>,
    bvhs: Vec<MeshBvh>,
}

impl MeshIndex {
    pub fn new(meshes: Vec<TriangleMesh>) -> MeshIndex {
        let bvhs = meshes.iter().map(MeshBvh::build).collect();
        MeshIndex { meshes, bvhs }
    }

    pub fn meshes(&self) -> &[TriangleMesh] {
        &self.meshes
    }

    pub fn raycast(&self, ray: &Ray) -> Option<Hit> {
        let inv_dir = Vec3::new(1.0 / ray.direction.x, 1.0 / ray.direction.y, 1.0 / ray.direction.z);
        let mut best: Option<Hit> = None;
        let mut stack = Vec::with_capacity(64);
        for (mi, (mesh, bvh)) in self.meshes.iter().zip(&self.bvhs).enumerate() {
            if bvh.nodes.is_empty() {
                continue;
            }
            stack.clear();
            stack.push(0usize);
            while let Some(ni) = stack.pop() {
                let limit = best.map_or(f64::INFINITY, |b| b.t + RAY_EPSILON);
                let node = &bvh.nodes[ni];
                if node.bounds().entry(ray.origin, inv_dir, limit).is_none() {
                    continue;
                }
                match *node {
                    Node::Leaf { start, end, .. } => {
                        for &ti in &bvh.order[start..end] {
                            let ti = ti as usize;
                            if let Some((t, normal)) = intersect_triangle(ray, mesh.triangle(ti)) {
                                consider(
                                    &mut best,
                                    Hit {
                                        point: ray.at(t),
                                        normal,
                                        mesh_index: mi,
                                        triangle_index: ti,
                                        t,
                                    },
                                );
                            }
                        }
                    }
                    Node::Inner { left, right, .. } => {
                        stack.push(right);
                        stack.push(left);
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_z1() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(-0.5, -0.5, 1.0),
                Vec3::new(0.5, -0.5, 1.0),
                Vec3::new(0.5, 0.5, 1.0),
                Vec3::new(-0.5, 0.5, 1.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn hits_unit_quad_head_on() {
        let ray = Ray::new(Vec3::ZERO, Vec3::Z).unwrap();
        let hit = raycast(&[quad_z1()], &ray).unwrap();
        assert!((hit.t - 1.0).abs() < 1e-12);
        assert!(hit.point.max_abs_diff(Vec3::new(0.0, 0.0, 1.0)) < 1e-12);
        assert!(hit.normal.max_abs_diff(-Vec3::Z) < 1e-12);
    }

    #[test]
    fn misses_when_pointing_away() {
        let ray = Ray::new(Vec3::ZERO, -Vec3::Z).unwrap();
        assert!(raycast(&[quad_z1()], &ray).is_none());
        assert!(MeshIndex::new(vec![quad_z1()]).raycast(&ray).is_none());
    }

    #[test]
    fn degenerate_triangles_skipped() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let ray = Ray::new(Vec3::new(0.5, 0.0, 0.0), Vec3::Z).unwrap();
        assert!(raycast(&[m], &ray).is_none());
    }

    #[test]
    fn ties_break_toward_lower_index() {
        let ray = Ray::new(Vec3::new(0.1, 0.1, 0.0), Vec3::Z).unwrap();
        let hit = raycast(&[quad_z1(), quad_z1()], &ray).unwrap();
        assert_eq!(hit.mesh_index, 0);
        let idx = MeshIndex::new(vec![quad_z1(), quad_z1()]);
        assert_eq!(idx.raycast(&ray).unwrap().mesh_index, 0);
    }

    #[test]
    fn nearest_mesh_wins_regardless_of_order() {
        let near = quad_z1();
        let far = quad_z1().transformed(&crate::geometry::RigidTransform::from_translation(Vec3::new(0.0, 0.0, 2.0)));
        let ray = Ray::new(Vec3::new(0.1, -0.2, 0.0), Vec3::Z).unwrap();
        let a = raycast(&[far.clone(), near.clone()], &ray).unwrap();
        let b = raycast(&[near, far], &ray).unwrap();
        assert!((a.t - 1.0).abs() < 1e-12 && (b.t - 1.0).abs() < 1e-12);
        assert_eq!((a.mesh_index, b.mesh_index), (1, 0));
    }
}
