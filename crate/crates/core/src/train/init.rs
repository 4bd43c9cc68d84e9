//! Multi-scale static initialization from trajectory boxes and a LiDAR
//! point cloud.
//!
//! The inner region is the union of the trajectory boxes grown by fixed
//! margins. Inner cells of edge `base_edge` that contain points are split
//! once and kept; empty inner cells are dropped. Around it sit `shells`
//! layers of coarser cells, layer `k` reaching `2^k` times the inner extent
//! with edge `base_edge * 2^k`. Each layer boundary is snapped outwards to
//! the next coarser grid so every layer tiles exactly.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SalfError};
use crate::math::{Aabb, Vec3};
use crate::scene::{child_ijks, Scene, SceneBounds, VoxelParams, A_EMPTY, A_OCCUPIED, B_INIT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub base_edge: f64,
    /// Margins added to the trajectory boxes (z is up).
    pub expand_up: f64,
    pub expand_down: f64,
    pub expand_lateral: f64,
    pub shells: u8,
    /// Levels available to densification below the split inner level.
    pub extra_levels: u8,
    pub budget: usize,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            base_edge: 1.0,
            expand_up: 10.0,
            expand_down: 5.0,
            expand_lateral: 40.0,
            shells: 4,
            extra_levels: 1,
            budget: 2_500_000,
            seed: 0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        let margins = [self.expand_up, self.expand_down, self.expand_lateral];
        if !(self.base_edge > 0.0)
            || margins.iter().any(|m| !(*m >= 0.0) || !m.is_finite())
            || self.shells > 8
        {
            return Err(SalfError::InvalidConfig(format!(
                "bad initialization settings {self:?}"
            )));
        }
        Ok(())
    }

    /// Level of the unsplit inner cells.
    pub fn inner_level(&self) -> u8 {
        self.shells
    }

    pub fn max_levels(&self) -> u8 {
        self.shells + 2 + self.extra_levels
    }
}

fn snap_out(b: &Aabb, grid: f64) -> Aabb {
    let tol = 1e-9;
    Aabb::new(
        b.min.map(|v| (v / grid + tol).floor() * grid),
        b.max.map(|v| (v / grid - tol).ceil() * grid),
    )
}

/// The boxes bounding each layer: index 0 is the inner region, index `k`
/// the outer boundary of shell `k`.
pub fn layer_boxes(trajectory_boxes: &[Aabb], cfg: &InitConfig) -> Result<Vec<Aabb>> {
    cfg.validate()?;
    let first = trajectory_boxes.first().ok_or_else(|| {
        SalfError::InvalidConfig("at least one trajectory box is required".into())
    })?;
    if trajectory_boxes.iter().any(|b| !b.is_valid()) {
        return Err(SalfError::InvalidConfig(
            "trajectory boxes must be finite and non-empty".into(),
        ));
    }
    let union = trajectory_boxes.iter().fold(*first, |acc, b| acc.union(b));
    let inner = Aabb::new(
        union.min - Vec3::new(cfg.expand_lateral, cfg.expand_lateral, cfg.expand_down),
        union.max + Vec3::new(cfg.expand_lateral, cfg.expand_lateral, cfg.expand_up),
    );
    let e = cfg.base_edge;
    let n = usize::from(cfg.shells);
    let grid = |k: usize| {
        if k < n {
            e * f64::from(1u32 << (k + 1))
        } else {
            e * f64::from(1u32 << k)
        }
    };
    let mut out = vec![snap_out(&inner, grid(0))];
    for k in 1..=n {
        let grown = out[k - 1].union(&inner.scaled(f64::from(1u32 << k)));
        out.push(snap_out(&grown, grid(k)));
    }
    Ok(out)
}

/// Cells of `level` whose centers lie inside `outer` but not `hole`.
fn layer_cells(
    bounds: &SceneBounds,
    level: u8,
    outer: &Aabb,
    hole: Option<&Aabb>,
) -> Vec<[i32; 3]> {
    let e = bounds.edge_at(level);
    let lo = bounds.cell_of(level, &(outer.min + Vec3::repeat(0.5 * e)));
    let hi = bounds.cell_of(level, &(outer.max - Vec3::repeat(0.5 * e)));
    let mut out = Vec::new();
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                let c = bounds.voxel_center(level, [i, j, k]);
                if hole.map_or(true, |h| !h.contains(&c)) {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Builds the initial static scene.
pub fn init_multiscale(
    trajectory_boxes: &[Aabb],
    points: &[Vec3],
    cfg: &InitConfig,
) -> Result<Scene> {
    let layers = layer_boxes(trajectory_boxes, cfg)?;
    let n = cfg.shells;
    let outer = layers[usize::from(n)];
    let bounds = SceneBounds::new(
        outer.min,
        outer.max,
        cfg.base_edge * f64::from(1u32 << n),
        cfg.max_levels(),
    )?;
    let mut scene = Scene::new(bounds, cfg.budget);
    scene.inner_region = Some(layers[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let inner_level = cfg.inner_level();
    let inside: Vec<&Vec3> = points.iter().filter(|p| layers[0].contains(p)).collect();
    let fine: HashSet<[i32; 3]> = inside
        .iter()
        .map(|p| bounds.cell_of(inner_level + 1, p))
        .collect();
    let coarse: HashSet<[i32; 3]> = inside
        .iter()
        .map(|p| bounds.cell_of(inner_level, p))
        .collect();
    if inside.is_empty() {
        log::warn!("no LiDAR points inside the inner region; keeping it dense");
    }
    for cell in layer_cells(&bounds, inner_level, &layers[0], None) {
        if inside.is_empty() {
            scene.voxels.insert(
                &bounds,
                inner_level,
                cell,
                VoxelParams::random(&mut rng, A_EMPTY, B_INIT),
            )?;
        } else if coarse.contains(&cell) {
            for c in child_ijks(cell) {
                let a = if fine.contains(&c) {
                    A_OCCUPIED
                } else {
                    A_EMPTY
                };
                scene.voxels.insert(
                    &bounds,
                    inner_level + 1,
                    c,
                    VoxelParams::random(&mut rng, a, B_INIT),
                )?;
            }
        }
    }
    for k in 1..=n {
        let level = n - k;
        let hole = layers[usize::from(k - 1)];
        for cell in layer_cells(&bounds, level, &layers[usize::from(k)], Some(&hole)) {
            scene.voxels.insert(
                &bounds,
                level,
                cell,
                VoxelParams::random(&mut rng, A_EMPTY, B_INIT),
            )?;
        }
    }
    Ok(scene)
}
