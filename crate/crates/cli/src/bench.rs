//! Timing tables for the two renderers and for octree marching against
//! intersecting every voxel.

use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

use salf_core::math::{RigidPose, Vec3};
use salf_core::octree::{build_octree, march, ray_box_interval, OctreeBuffer};
use salf_core::render::raster::{rasterize_scene, RasterOptions};
use salf_core::render::ray::{render_image, RenderOptions, SceneOctrees};
use salf_core::scene::{Scene, SparseVoxelSet};
use salf_core::sensors::{gen_camera_rays, CameraModel, Ray};

pub const BENCH_HFOV_DEG: f64 = 70.0;

/// Every voxel intersected directly and sorted by entry distance.
pub fn brute_force_segments(set: &SparseVoxelSet, ray: &Ray, t_max: f64) -> Vec<(u32, f64, f64)> {
    let mut out: Vec<(u32, f64, f64)> = set
        .geoms()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let bb = g.aabb();
            let (t0, t1) = ray_box_interval(&ray.origin, &ray.dir, &bb.min, &bb.max)?;
            let (t0, t1) = (t0.max(0.0), t1.min(t_max));
            (t1 > t0).then_some((i as u32, t0, t1))
        })
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

/// Pose for a bench camera: the first rig camera when there is one,
/// otherwise a view of the scene center from outside a corner.
pub fn default_bench_pose(scene: &Scene) -> RigidPose {
    let bb = scene.inner_region.unwrap_or_else(|| scene.bounds.aabb());
    let c = bb.center();
    let ext = bb.extents();
    RigidPose::look_at(c + Vec3::new(0.9 * ext.x, 0.7 * ext.y, 0.5 * ext.z), c, Vec3::z())
}

pub fn bench_camera(pose: RigidPose, res: u32) -> CameraModel {
    CameraModel::pinhole_fov(res, res, BENCH_HFOV_DEG.to_radians(), pose)
}

#[derive(Clone, Debug, Serialize)]
pub struct RenderTiming {
    pub resolution: u32,
    pub ray_seconds: f64,
    pub raster_seconds: f64,
}

impl RenderTiming {
    pub fn ray_fps(&self) -> f64 {
        1.0 / self.ray_seconds
    }

    pub fn raster_fps(&self) -> f64 {
        1.0 / self.raster_seconds
    }
}

/// Best of `repeats` wall-clock times for each renderer.
pub fn time_renderers(scene: &Scene, pose: RigidPose, resolutions: &[u32], repeats: usize) -> Result<Vec<RenderTiming>> {
    let trees = SceneOctrees::build(scene)?;
    let ray_opts = RenderOptions::default();
    let raster_opts = RasterOptions::default();
    let mut out = Vec::new();
    for &res in resolutions {
        let cam = bench_camera(pose, res);
        let (mut best_ray, mut best_raster) = (f64::INFINITY, f64::INFINITY);
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let rays = gen_camera_rays(&cam, 0.0)?;
            render_image(scene, &trees, &rays, res, res, &ray_opts)?;
            best_ray = best_ray.min(t.elapsed().as_secs_f64());
            let t = Instant::now();
            rasterize_scene(scene, &cam, 0.0, &raster_opts)?;
            best_raster = best_raster.min(t.elapsed().as_secs_f64());
        }
        out.push(RenderTiming {
            resolution: res,
            ray_seconds: best_ray,
            raster_seconds: best_raster,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct MarchTiming {
    pub rays: usize,
    pub voxels: usize,
    pub octree_seconds: f64,
    pub brute_seconds: f64,
    /// Total segments found; equal for both when they agree.
    pub octree_segments: usize,
    pub brute_segments: usize,
}

impl MarchTiming {
    pub fn speedup(&self) -> f64 {
        self.brute_seconds / self.octree_seconds
    }
}

fn march_all(tree: &OctreeBuffer, rays: &[Ray]) -> Result<usize> {
    let mut n = 0;
    for r in rays {
        n += march(tree, &r.origin, &r.dir, f64::INFINITY)?.len();
    }
    Ok(n)
}

/// Single-threaded segment enumeration for all pixels of a `res` x `res`
/// camera, through the octree and by brute force.
pub fn time_marching(set: &SparseVoxelSet, scene: &Scene, pose: RigidPose, res: u32) -> Result<MarchTiming> {
    let tree = build_octree(set, &scene.bounds)?;
    let rays = gen_camera_rays(&bench_camera(pose, res), 0.0)?;
    let t = Instant::now();
    let octree_segments = march_all(&tree, &rays)?;
    let octree_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let brute_segments: usize = rays.iter().map(|r| brute_force_segments(set, r, f64::INFINITY).len()).sum();
    let brute_seconds = t.elapsed().as_secs_f64();
    Ok(MarchTiming {
        rays: rays.len(),
        voxels: set.len(),
        octree_seconds,
        brute_seconds,
        octree_segments,
        brute_segments,
    })
}

pub fn format_render_table(rows: &[RenderTiming]) -> String {
    let mut s = String::from("resolution  ray_fps  raster_fps  raster/ray\n");
    for r in rows {
        s += &format!(
            "{:>10}  {:>7.2}  {:>10.2}  {:>10.2}\n",
            format!("{0}x{0}", r.resolution),
            r.ray_fps(),
            r.raster_fps(),
            r.ray_seconds / r.raster_seconds
        );
    }
    s
}
