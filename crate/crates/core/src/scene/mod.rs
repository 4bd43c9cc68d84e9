//! Scene representation: voxels carrying local linear fields, the sparse
//! multi-level voxel set, dynamic actors and the composed scene.

mod actor;
pub mod field;

pub use actor::{actor_pose_at, Actor, Keyframe};
pub use field::{
    eval_color, eval_density, eval_point, eval_sdf, local_to_world, sdf_to_density,
    segment_opacity, sh_basis, world_to_local, PointSample, MAX_ALPHA, SH_C0, SH_C1,
};

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SalfError};
use crate::math::{Aabb, Quat, Vec3};
use crate::octree::MIN_VOXEL_EDGE;

/// Initial `a` for voxels that contain LiDAR points.
pub const A_OCCUPIED: f64 = 2.0;
/// Initial `a` for all other voxels.
pub const A_EMPTY: f64 = 0.1;
/// Initial `b` everywhere.
pub const B_INIT: f64 = 0.2;

/// The reconstruction volume and its level-0 grid.
///
/// Level `l` voxels have edge `base_edge / 2^l` and integer coordinates
/// counted from `aabb_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub aabb_min: Vec3,
    pub aabb_max: Vec3,
    pub base_edge: f64,
    pub max_levels: u8,
}

impl SceneBounds {
    pub fn new(aabb_min: Vec3, aabb_max: Vec3, base_edge: f64, max_levels: u8) -> Result<Self> {
        let b = Self {
            aabb_min,
            aabb_max,
            base_edge,
            max_levels,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0..3).all(|k| self.aabb_min[k] < self.aabb_max[k]) {
            return Err(SalfError::InvalidBounds(format!(
                "aabb_min {:?} must be below aabb_max {:?}",
                self.aabb_min, self.aabb_max
            )));
        }
        if !(self.base_edge > 0.0 && self.base_edge.is_finite()) {
            return Err(SalfError::InvalidBounds(format!(
                "base_edge must be positive, got {}",
                self.base_edge
            )));
        }
        if self.max_levels == 0 {
            return Err(SalfError::InvalidBounds(
                "max_levels must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.aabb_min, self.aabb_max)
    }

    pub fn edge_at(&self, level: u8) -> f64 {
        self.base_edge / f64::from(1u32 << level)
    }

    pub fn voxel_center(&self, level: u8, ijk: [i32; 3]) -> Vec3 {
        let e = self.edge_at(level);
        Vec3::new(
            self.aabb_min.x + (f64::from(ijk[0]) + 0.5) * e,
            self.aabb_min.y + (f64::from(ijk[1]) + 0.5) * e,
            self.aabb_min.z + (f64::from(ijk[2]) + 0.5) * e,
        )
    }

    /// Grid cell at `level` containing `p` (floor convention).
    pub fn cell_of(&self, level: u8, p: &Vec3) -> [i32; 3] {
        let e = self.edge_at(level);
        let rel = (p - self.aabb_min) / e;
        [
            rel.x.floor() as i32,
            rel.y.floor() as i32,
            rel.z.floor() as i32,
        ]
    }

    /// Whether the cube of `(level, ijk)` lies inside the bounds.
    pub fn contains_cell(&self, level: u8, ijk: [i32; 3]) -> bool {
        let e = self.edge_at(level);
        let ext = self.aabb_max - self.aabb_min;
        let tol = 1e-9 * ext.max().max(1.0);
        (0..3).all(|k| ijk[k] >= 0 && f64::from(ijk[k] + 1) * e <= ext[k] + tol)
    }

    pub fn geom(&self, level: u8, ijk: [i32; 3]) -> VoxelGeom {
        VoxelGeom {
            level,
            ijk,
            center: self.voxel_center(level, ijk),
            edge: self.edge_at(level),
            rotation: Quat::identity(),
        }
    }
}

/// Static geometric attributes of one voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelGeom {
    pub level: u8,
    pub ijk: [i32; 3],
    pub center: Vec3,
    pub edge: f64,
    /// Fixed orientation; identity for every grid voxel.
    pub rotation: Quat,
}

impl VoxelGeom {
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center_extents(self.center, Vec3::repeat(self.edge))
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let h = 0.5 * self.edge;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let local = Vec3::new(
                if i & 1 == 0 { -h } else { h },
                if i & 2 == 0 { -h } else { h },
                if i & 4 == 0 { -h } else { h },
            );
            *c = self.center + self.rotation * local;
        }
        out
    }
}

/// Number of learnable scalars per voxel.
pub const PARAM_COUNT: usize = 27;

/// Learnable per-voxel fields. The same layout doubles as a gradient buffer.
///
/// `w_s` is the SDF field (`s = w_s . [x, 1]`); in raw density mode it is
/// read as the log-density field instead.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct VoxelParams {
    pub w_s: [f64; 4],
    pub w_c: [[f64; 3]; 3],
    pub w_sh: [[f64; 4]; 3],
    pub log_a: f64,
    pub log_b: f64,
}

impl VoxelParams {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn a(&self) -> f64 {
        self.log_a.exp()
    }

    pub fn b(&self) -> f64 {
        self.log_b.exp()
    }

    /// Default linear-layer style initialization: uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Self {
        let k3 = 1.0 / 3f64.sqrt();
        let k4 = 0.5;
        let mut p = Self::zeros();
        for v in p.w_s.iter_mut() {
            *v = rng.gen_range(-k3..k3);
        }
        for row in p.w_c.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-k3..k3);
            }
        }
        for row in p.w_sh.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-k4..k4);
            }
        }
        p.log_a = a.ln();
        p.log_b = b.ln();
        p
    }

    pub fn to_flat(&self) -> [f64; PARAM_COUNT] {
        let mut out = [0.0; PARAM_COUNT];
        out[0..4].copy_from_slice(&self.w_s);
        for r in 0..3 {
            out[4 + 3 * r..7 + 3 * r].copy_from_slice(&self.w_c[r]);
            out[13 + 4 * r..17 + 4 * r].copy_from_slice(&self.w_sh[r]);
        }
        out[25] = self.log_a;
        out[26] = self.log_b;
        out
    }

    pub fn from_flat(flat: &[f64; PARAM_COUNT]) -> Self {
        let mut p = Self::zeros();
        p.w_s.copy_from_slice(&flat[0..4]);
        for r in 0..3 {
            p.w_c[r].copy_from_slice(&flat[4 + 3 * r..7 + 3 * r]);
            p.w_sh[r].copy_from_slice(&flat[13 + 4 * r..17 + 4 * r]);
        }
        p.log_a = flat[25];
        p.log_b = flat[26];
        p
    }

    pub fn add_scaled(&mut self, other: &VoxelParams, scale: f64) {
        let mut a = self.to_flat();
        for (x, y) in a.iter_mut().zip(other.to_flat()) {
            *x += scale * y;
        }
        *self = Self::from_flat(&a);
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// L2 norm of the color-field entries.
    pub fn w_c_norm(&self) -> f64 {
        self.w_c.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// How per-voxel density is derived from the geometry field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    /// Signed distance converted to density through the `a, b` transform.
    #[default]
    Sdf,
    /// `exp(w . [x, 1])`.
    Raw,
}

pub type VoxelKey = (u8, [i32; 3]);

/// Level-indexed collection of voxels. Geometry and parameters are stored as
/// parallel arrays; `lookup` maps `(level, ijk)` to the array index.
#[derive(Clone, Debug, Default)]
pub struct SparseVoxelSet {
    geoms: Vec<VoxelGeom>,
    params: Vec<VoxelParams>,
    lookup: HashMap<VoxelKey, usize>,
    /// Strict ancestors of stored voxels.
    ancestors: HashSet<VoxelKey>,
    budget: usize,
}

impl SparseVoxelSet {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.geoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geoms.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn set_budget(&mut self, budget: usize) {
        self.budget = budget;
    }

    pub fn geoms(&self) -> &[VoxelGeom] {
        &self.geoms
    }

    pub fn params(&self) -> &[VoxelParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [VoxelParams] {
        &mut self.params
    }

    pub fn geom(&self, idx: usize) -> &VoxelGeom {
        &self.geoms[idx]
    }

    pub fn param(&self, idx: usize) -> &VoxelParams {
        &self.params[idx]
    }

    pub fn index_of(&self, level: u8, ijk: [i32; 3]) -> Option<usize> {
        self.lookup.get(&(level, ijk)).copied()
    }

    /// Finds the stored voxel at `level` or any coarser level whose cube
    /// contains the level-`level` cell `ijk`.
    pub fn find_covering(&self, level: u8, ijk: [i32; 3]) -> Option<usize> {
        (0..=level).rev().find_map(|l| {
            let shift = level - l;
            self.index_of(l, [ijk[0] >> shift, ijk[1] >> shift, ijk[2] >> shift])
        })
    }

    /// Inserts a grid voxel. Rejects duplicates, cells outside `bounds`,
    /// levels beyond `max_levels`, budget overflow, and cells nested inside
    /// a stored coarser voxel.
    pub fn insert(
        &mut self,
        bounds: &SceneBounds,
        level: u8,
        ijk: [i32; 3],
        params: VoxelParams,
    ) -> Result<usize> {
        if level >= bounds.max_levels {
            return Err(SalfError::LevelTooDeep {
                level,
                max_levels: bounds.max_levels,
            });
        }
        let edge = bounds.edge_at(level);
        if edge < MIN_VOXEL_EDGE {
            return Err(SalfError::VoxelTooSmall {
                edge,
                min_edge: MIN_VOXEL_EDGE,
            });
        }
        if !bounds.contains_cell(level, ijk) {
            return Err(SalfError::VoxelOutOfBounds { level, ijk });
        }
        if self.lookup.contains_key(&(level, ijk)) {
            return Err(SalfError::DuplicateVoxel { level, ijk });
        }
        if self.ancestors.contains(&(level, ijk))
            || (level > 0 && self.find_covering(level - 1, parent_ijk(ijk)).is_some())
        {
            return Err(SalfError::OverlappingVoxel { level, ijk });
        }
        if self.len() >= self.budget {
            return Err(SalfError::BudgetExceeded {
                budget: self.budget,
            });
        }
        let idx = self.geoms.len();
        self.geoms.push(bounds.geom(level, ijk));
        self.params.push(params);
        self.lookup.insert((level, ijk), idx);
        let mut a = ijk;
        for l in (0..level).rev() {
            a = parent_ijk(a);
            if !self.ancestors.insert((l, a)) {
                break;
            }
        }
        Ok(idx)
    }

    /// Rebuilds a set from parallel arrays, re-deriving geometry and checking
    /// every insertion invariant.
    pub fn from_parts(
        bounds: &SceneBounds,
        keys: &[VoxelKey],
        params: Vec<VoxelParams>,
        budget: usize,
    ) -> Result<Self> {
        let mut set = Self::new(budget);
        for ((level, ijk), p) in keys.iter().zip(params) {
            set.insert(bounds, *level, *ijk, p)?;
        }
        Ok(set)
    }

    pub fn keys(&self) -> Vec<VoxelKey> {
        self.geoms.iter().map(|g| (g.level, g.ijk)).collect()
    }
}

pub fn parent_ijk(ijk: [i32; 3]) -> [i32; 3] {
    [ijk[0] >> 1, ijk[1] >> 1, ijk[2] >> 1]
}

/// The eight level+1 cells covering `ijk`, in child-index order
/// (`x + 2(y + 2z)`).
pub fn child_ijks(ijk: [i32; 3]) -> [[i32; 3]; 8] {
    let mut out = [[0; 3]; 8];
    for (c, o) in out.iter_mut().enumerate() {
        *o = [
            2 * ijk[0] + (c & 1) as i32,
            2 * ijk[1] + ((c >> 1) & 1) as i32,
            2 * ijk[2] + ((c >> 2) & 1) as i32,
        ];
    }
    out
}

/// Static volume plus dynamic actors.
#[derive(Clone, Debug)]
pub struct Scene {
    pub bounds: SceneBounds,
    pub voxels: SparseVoxelSet,
    pub actors: Vec<Actor>,
    pub density_mode: DensityMode,
    /// Inner (densely observed) region; voxels outside it form the outer
    /// shells.
    pub inner_region: Option<Aabb>,
}

impl Scene {
    pub fn new(bounds: SceneBounds, budget: usize) -> Self {
        Self {
            bounds,
            voxels: SparseVoxelSet::new(budget),
            actors: Vec::new(),
            density_mode: DensityMode::Sdf,
            inner_region: None,
        }
    }

    pub fn is_outer(&self, geom: &VoxelGeom) -> bool {
        match &self.inner_region {
            Some(inner) => !inner.contains(&geom.center),
            None => false,
        }
    }
}
