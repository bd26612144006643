use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CaptureError, MeshCaptureTimer};
use crate::geometry::{TriangleMesh, Vec3};
use crate::ids::{CaptureId, SessionId};

pub const DEFAULT_BLOCK_SIZE: f64 = 1.0;

/// Integer cell of the meshing grid, serialized as `[ix, iy, iz]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct BlockKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl BlockKey {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        Self { ix, iy, iz }
    }

    pub fn containing(p: Vec3, block_size: f64) -> Self {
        let f = |c: f64| (c / block_size).floor() as i32;
        Self::new(f(p.x), f(p.y), f(p.z))
    }

    /// Block bounds grown by one block on every side.
    pub fn padded_bounds(&self, block_size: f64) -> (Vec3, Vec3) {
        let lo = Vec3::new(
            f64::from(self.ix - 1) * block_size,
            f64::from(self.iy - 1) * block_size,
            f64::from(self.iz - 1) * block_size,
        );
        let hi = Vec3::new(
            f64::from(self.ix + 2) * block_size,
            f64::from(self.iy + 2) * block_size,
            f64::from(self.iz + 2) * block_size,
        );
        (lo, hi)
    }

    pub fn obj_file_name(&self) -> String {
        format!("block_{}_{}_{}.obj", self.ix, self.iy, self.iz)
    }

    pub fn parse_obj_file_name(name: &str) -> Option<BlockKey> {
        let body = name.strip_prefix("block_")?.strip_suffix(".obj")?;
        let mut it = body.split('_').map(str::parse::<i32>);
        let key = BlockKey::new(it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?);
        it.next().is_none().then_some(key)
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.ix, self.iy, self.iz)
    }
}

impl From<[i32; 3]> for BlockKey {
    fn from(a: [i32; 3]) -> Self {
        BlockKey::new(a[0], a[1], a[2])
    }
}

impl From<BlockKey> for [i32; 3] {
    fn from(k: BlockKey) -> Self {
        [k.ix, k.iy, k.iz]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlockEntry {
    key: BlockKey,
    mesh: TriangleMesh,
}

mod block_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<BlockKey, TriangleMesh>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|(k, mesh)| BlockEntry {
            key: *k,
            mesh: mesh.clone(),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<BlockKey, TriangleMesh>, D::Error> {
        let v = Vec::<BlockEntry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| (e.key, e.mesh)).collect())
    }
}

/// Coarse mesh of one capture, keyed by grid cell, in the anchor frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshBlockSet {
    pub capture_id: CaptureId,
    pub session_id: SessionId,
    pub block_size: f64,
    #[serde(with = "block_map")]
    pub blocks: BTreeMap<BlockKey, TriangleMesh>,
}

impl MeshBlockSet {
    pub fn new(capture_id: CaptureId, session_id: SessionId, block_size: f64) -> Self {
        assert!(block_size > 0.0, "block size must be positive");
        Self {
            capture_id,
            session_id,
            block_size,
            blocks: BTreeMap::new(),
        }
    }

    /// Checks that every vertex of `mesh` lies in the padded bounds of `key`.
    pub fn check_block(&self, key: BlockKey, mesh: &TriangleMesh) -> Result<(), CaptureError> {
        mesh.validate()?;
        let (lo, hi) = key.padded_bounds(self.block_size);
        let inside = |v: &Vec3| {
            v.x >= lo.x && v.y >= lo.y && v.z >= lo.z && v.x <= hi.x && v.y <= hi.y && v.z <= hi.z
        };
        if mesh.vertices.iter().all(inside) {
            Ok(())
        } else {
            Err(CaptureError::BlockOutOfBounds { key })
        }
    }

    /// Replaces the block at `key`; only allowed while `timer` is capturing.
    pub fn ingest(&mut self, timer: &MeshCaptureTimer, key: BlockKey, mesh: TriangleMesh) -> Result<(), CaptureError> {
        if !timer.is_capturing() {
            return Err(CaptureError::NotCapturing);
        }
        self.check_block(key, &mesh)?;
        self.blocks.insert(key, mesh);
        Ok(())
    }

    pub fn triangle_count(&self) -> usize {
        self.blocks.values().map(|m| m.triangles.len()).sum()
    }

    /// Writes one `block_ix_iy_iz.obj` per block into `dir`.
    pub fn export_obj(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (key, mesh) in &self.blocks {
            std::fs::write(dir.join(key.obj_file_name()), mesh.to_obj())?;
        }
        Ok(())
    }
}
