use std::ops::ControlFlow;

use crate::error::{Result, SalfError};
use crate::math::Vec3;

use super::{ray_box_interval, OctreeBuffer, MARCH_EPSILON};

/// One ray/voxel intersection, in ray parameter units (meters for unit
/// directions).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySegment {
    pub voxel: u32,
    pub t_entry: f64,
    pub t_exit: f64,
    pub midpoint: Vec3,
}

impl RaySegment {
    pub fn delta(&self) -> f64 {
        self.t_exit - self.t_entry
    }

    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t_entry + self.t_exit)
    }
}

pub(crate) fn check_unit(dir: &Vec3) -> Result<()> {
    if (dir.norm_squared() - 1.0).abs() > 2e-6 {
        return Err(SalfError::NonUnitDirection([dir.x, dir.y, dir.z]));
    }
    Ok(())
}

/// Walks the octree along `origin + t dir` for `t` in `[0, t_max]`, calling
/// `visit` for every occupied voxel in increasing `t`. Each node is left by
/// stepping `MARCH_EPSILON` past its exit; `visit` returning
/// `ControlFlow::Break` stops the walk.
///
/// Segment bounds are the exact slab intersections of the voxel cube,
/// clipped to `[0, t_max]`.
pub fn march_with<F>(
    buffer: &OctreeBuffer,
    origin: &Vec3,
    dir: &Vec3,
    t_max: f64,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&RaySegment) -> ControlFlow<()>,
{
    check_unit(dir)?;
    let root_min = buffer.root_min();
    let root_max = buffer.root_max();
    let Some((r0, r1)) = ray_box_interval(origin, dir, &root_min, &root_max) else {
        return Ok(());
    };
    let t_start = r0.max(0.0);
    let t_end = r1.min(t_max);
    let mut t = t_start;
    while t < t_end {
        let pos = origin + dir * t;
        let hit = buffer.query_clamped(&pos);
        let node_max = hit.max();
        let (n0, n1) = ray_box_interval(origin, dir, &hit.min, &node_max).unwrap_or((t, t));
        if let Some(voxel) = hit.voxel {
            let t_entry = n0.max(t_start);
            let t_exit = n1.min(t_end);
            if t_exit > t_entry {
                let seg = RaySegment {
                    voxel,
                    t_entry,
                    t_exit,
                    midpoint: origin + dir * (0.5 * (t_entry + t_exit)),
                };
                if visit(&seg).is_break() {
                    return Ok(());
                }
            }
        }
        t = n1.max(t) + MARCH_EPSILON;
    }
    Ok(())
}

/// Collects all segments of [`march_with`].
pub fn march(
    buffer: &OctreeBuffer,
    origin: &Vec3,
    dir: &Vec3,
    t_max: f64,
) -> Result<Vec<RaySegment>> {
    let mut out = Vec::new();
    march_with(buffer, origin, dir, t_max, |s| {
        out.push(*s);
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::build_octree;
    use crate::scene::{SceneBounds, SparseVoxelSet, VoxelParams};

    #[test]
    fn empty_scene_has_no_segments() {
        let b = SceneBounds::new(Vec3::zeros(), Vec3::repeat(4.0), 1.0, 3).unwrap();
        let tree = build_octree(&SparseVoxelSet::new(1), &b).unwrap();
        let segs = march(&tree, &Vec3::new(-1.0, 2.0, 2.0), &Vec3::x(), f64::INFINITY).unwrap();
        assert!(segs.is_empty());
    }

    #[test]
    fn row_of_four_unit_voxels() {
        let b = SceneBounds::new(Vec3::zeros(), Vec3::new(4.0, 1.0, 1.0), 1.0, 3).unwrap();
        let mut set = SparseVoxelSet::new(10);
        for i in 0..4 {
            set.insert(&b, 0, [i, 0, 0], VoxelParams::zeros()).unwrap();
        }
        let tree = build_octree(&set, &b).unwrap();
        let segs = march(&tree, &Vec3::new(-2.0, 0.5, 0.5), &Vec3::x(), f64::INFINITY).unwrap();
        assert_eq!(segs.len(), 4);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.voxel, i as u32);
            assert!((s.delta() - 1.0).abs() <= 2.0 * MARCH_EPSILON);
            assert!((s.t_entry - (2.0 + i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_inside_voxel_starts_at_zero() {
        let b = SceneBounds::new(Vec3::zeros(), Vec3::repeat(2.0), 2.0, 2).unwrap();
        let mut set = SparseVoxelSet::new(10);
        set.insert(&b, 0, [0, 0, 0], VoxelParams::zeros()).unwrap();
        let tree = build_octree(&set, &b).unwrap();
        let segs = march(&tree, &Vec3::new(0.5, 1.0, 1.0), &Vec3::x(), f64::INFINITY).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].t_entry, 0.0);
        assert!((segs[0].t_exit - 1.5).abs() < 1e-12);
    }

    #[test]
    fn t_max_clips_and_break_stops() {
        let b = SceneBounds::new(Vec3::zeros(), Vec3::new(4.0, 1.0, 1.0), 1.0, 3).unwrap();
        let mut set = SparseVoxelSet::new(10);
        for i in 0..4 {
            set.insert(&b, 0, [i, 0, 0], VoxelParams::zeros()).unwrap();
        }
        let tree = build_octree(&set, &b).unwrap();
        let o = Vec3::new(0.0, 0.5, 0.5);
        let segs = march(&tree, &o, &Vec3::x(), 2.5).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[2].t_exit, 2.5);
        let mut n = 0;
        march_with(&tree, &o, &Vec3::x(), f64::INFINITY, |_| {
            n += 1;
            if n == 2 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(n, 2);
    }

    #[test]
    fn non_unit_direction_rejected() {
        let b = SceneBounds::new(Vec3::zeros(), Vec3::repeat(1.0), 1.0, 1).unwrap();
        let tree = build_octree(&SparseVoxelSet::new(1), &b).unwrap();
        assert!(march(&tree, &Vec3::zeros(), &Vec3::new(1.0, 1.0, 0.0), 1.0).is_err());
    }
}
