use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{GeometryError, RigidTransform, Vec3};

/// Indexed triangle mesh. Indices are zero-based.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let m = Self {
            vertices,
            triangles,
            normals: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let n = self.vertices.len();
        for (i, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&ix| ix as usize >= n) {
                return Err(GeometryError::IndexOutOfRange { triangle: i });
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(GeometryError::NormalCountMismatch);
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Axis-aligned bounds, `None` when there are no vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        )
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| t.apply(v)).collect(),
            triangles: self.triangles.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|&n| t.apply_vector(n)).collect()),
        }
    }

    /// Unit geometric normal (right-hand winding), `None` for degenerate triangles.
    pub fn face_normal(&self, i: usize) -> Option<Vec3> {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(c - a).normalized()
    }

    /// Serializes as a Wavefront OBJ (`v`, optional `vn`, `f` lines).
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        if let Some(normals) = &self.normals {
            for n in normals {
                let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
            }
            for [a, b, c] in &self.triangles {
                let _ = writeln!(out, "f {0}//{0} {1}//{1} {2}//{2}", a + 1, b + 1, c + 1);
            }
        } else {
            for [a, b, c] in &self.triangles {
                let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
            }
        }
        out
    }

    /// Parses the `v`/`vn`/`f` subset of OBJ. Polygons are fan-triangulated;
    /// other statements are ignored.
    pub fn from_obj(text: &str) -> Result<TriangleMesh, GeometryError> {
        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let mut parts = line.split_whitespace();
            let bad = || GeometryError::ObjParse { line: lineno + 1 };
            match parts.next() {
                Some("v") | Some("vn") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>().map_err(|_| bad()))
                        .collect::<Result<_, _>>()?;
                    if coords.len() != 3 {
                        return Err(bad());
                    }
                    let v = Vec3::new(coords[0], coords[1], coords[2]);
                    if line.starts_with("vn") {
                        normals.push(v);
                    } else {
                        vertices.push(v);
                    }
                }
                Some("f") => {
                    let idx: Vec<u32> = parts
                        .map(|tok| {
                            let head = tok.split('/').next().unwrap_or("");
                            let i: i64 = head.parse().map_err(|_| bad())?;
                            let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                            u32::try_from(resolved).map_err(|_| bad())
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(bad());
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        let normals = if normals.is_empty() { None } else { Some(normals) };
        let mesh = TriangleMesh {
            vertices,
            triangles,
            normals,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(-1.0, -1.0, 1.0),
                Vec3::new(1.0, -1.0, 1.0),
                Vec3::new(1.0, 1.0, 1.0),
                Vec3::new(-1.0, 1.0, 1.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn obj_roundtrip_is_exact() {
        let mut m = quad();
        m.vertices[0].x = 0.1 + 0.2;
        let back = TriangleMesh::from_obj(&m.to_obj()).unwrap();
        assert_eq!(back, m);
        m.normals = Some(vec![Vec3::Z; 4]);
        assert_eq!(TriangleMesh::from_obj(&m.to_obj()).unwrap(), m);
    }

    #[test]
    fn obj_quads_and_comments() {
        let text = "# site\no site\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n";
        let m = TriangleMesh::from_obj(text).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn bad_indices_rejected() {
        assert!(matches!(
            TriangleMesh::new(vec![Vec3::ZERO], vec![[0, 1, 2]]),
            Err(GeometryError::IndexOutOfRange { triangle: 0 })
        ));
        assert!(TriangleMesh::from_obj("v 0 0 0\nf 1 2 3\n").is_err());
        assert!(TriangleMesh::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], vec![]).is_err());
    }
}
