//! Tile-based voxel rasterizer for pinhole cameras.
//!
//! Voxels are projected to screen rectangles, binned into square tiles and
//! sorted per tile by camera-space center depth. Each pixel then walks its
//! tile's list front to back, intersecting its own ray with every cube
//! exactly, so the result matches the ray-caster wherever center-depth
//! order agrees with entry order along the ray.

use rayon::prelude::*;

use crate::error::{Result, SalfError};
use crate::math::Vec3;
use crate::octree::ray_box_interval;
use crate::scene::{
    actor_pose_at, eval_point, segment_opacity, DensityMode, Scene, VoxelGeom, VoxelParams,
};
use crate::sensors::{CameraKind, CameraModel, Shutter};

use super::{Compositor, Framebuffer, Owner, TERMINATION_OPACITY};

pub const DEFAULT_TILE_SIZE: u32 = 16;
pub const NEAR_PLANE: f64 = 0.05;

/// A voxel placed in the world frame at a fixed timestamp.
#[derive(Clone, Copy, Debug)]
pub struct FlatVoxel<'a> {
    pub geom: VoxelGeom,
    pub params: &'a VoxelParams,
    pub owner: Owner,
    /// Index within the owner's voxel set.
    pub index: u32,
}

/// Static voxels followed by every actor's voxels posed at time `t`. Actors
/// whose trajectory does not cover `t` are left out.
pub fn flatten_scene(scene: &Scene, t: f64) -> Vec<FlatVoxel<'_>> {
    let mut out: Vec<FlatVoxel<'_>> = scene
        .voxels
        .geoms()
        .iter()
        .zip(scene.voxels.params())
        .enumerate()
        .map(|(i, (g, p))| FlatVoxel {
            geom: *g,
            params: p,
            owner: Owner::Static,
            index: i as u32,
        })
        .collect();
    for (a, actor) in scene.actors.iter().enumerate() {
        let Ok(pose) = actor_pose_at(actor, t) else {
            continue;
        };
        for (i, (g, p)) in actor
            .voxels
            .geoms()
            .iter()
            .zip(actor.voxels.params())
            .enumerate()
        {
            let mut geom = *g;
            geom.center = pose.transform_point(&g.center);
            geom.rotation = pose.rotation * g.rotation;
            out.push(FlatVoxel {
                geom,
                params: p,
                owner: Owner::Actor(a),
                index: i as u32,
            });
        }
    }
    out
}

/// Screen footprint of a projected voxel. Bounds are inclusive pixel
/// indices, already clipped to the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub min_px: [u32; 2],
    pub max_px: [u32; 2],
    /// Continuous pixel coordinates of the projected center, when it lies in
    /// front of the near plane.
    pub center_px: Option<(f64, f64)>,
    /// Camera-space z of the voxel center.
    pub depth: f64,
}

fn check_pinhole(cam: &CameraModel) -> Result<()> {
    if cam.kind != CameraKind::Pinhole {
        return Err(SalfError::UnsupportedSensor(format!(
            "rasterization needs a pinhole camera, got {:?}",
            cam.kind
        )));
    }
    if !matches!(cam.shutter, Shutter::Global) {
        return Err(SalfError::UnsupportedSensor(
            "rasterization is global-shutter only".into(),
        ));
    }
    cam.validate()
}

/// Cube edges as pairs of corner indices (corners differ in one bit).
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Projects the part of the cube in front of the near plane: corners in
/// front plus the points where edges cross the plane. Returns `None` when
/// the voxel is entirely behind the near plane or off screen. The rectangle
/// is padded by one pixel.
pub fn project_voxel(geom: &VoxelGeom, cam: &CameraModel) -> Option<Projection> {
    let corners = geom.corners().map(|c| cam.pose.inverse_transform_point(&c));
    let depth = cam.pose.inverse_transform_point(&geom.center).z;
    let center_px = if depth > NEAR_PLANE {
        cam.project(&cam.pose.inverse_transform_point(&geom.center))
    } else {
        None
    };
    if corners.iter().all(|c| c.z <= NEAR_PLANE) {
        return None;
    }
    let (w, h) = (cam.width, cam.height);
    let (mut u0, mut v0, mut u1, mut v1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    let mut add = |p: &Vec3| -> Option<()> {
        let (u, v) = cam.project(p)?;
        u0 = u0.min(u);
        v0 = v0.min(v);
        u1 = u1.max(u);
        v1 = v1.max(v);
        Some(())
    };
    for c in corners.iter().filter(|c| c.z > NEAR_PLANE) {
        add(c)?;
    }
    for &(i, j) in &EDGES {
        let (a, b) = (&corners[i], &corners[j]);
        if (a.z > NEAR_PLANE) != (b.z > NEAR_PLANE) {
            let s = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * s;
            p.z = NEAR_PLANE;
            add(&p)?;
        }
    }
    let (u0, v0, u1, v1) = (
        (u0 - 1.0).floor(),
        (v0 - 1.0).floor(),
        (u1 + 1.0).floor(),
        (v1 + 1.0).floor(),
    );
    if u1 < 0.0 || v1 < 0.0 || u0 >= f64::from(w) || v0 >= f64::from(h) {
        return None;
    }
    let clip = |x: f64, n: u32| x.clamp(0.0, f64::from(n - 1)) as u32;
    Some(Projection {
        min_px: [clip(u0, w), clip(v0, h)],
        max_px: [clip(u1, w), clip(v1, h)],
        center_px,
        depth,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileBin {
    pub tile: [u32; 2],
    /// Indices into the flattened voxel list, ascending by center depth then
    /// index.
    pub voxels: Vec<u32>,
}

/// Tile grid covering an image, in tiles per axis.
pub fn tile_grid(cam: &CameraModel, tile_size: u32) -> [u32; 2] {
    [
        cam.width.div_ceil(tile_size),
        cam.height.div_ceil(tile_size),
    ]
}

/// Frustum-culls, bins every surviving voxel into all tiles its rectangle
/// overlaps and sorts each bin. Bins are row-major over the tile grid.
pub fn cull_and_bin(
    voxels: &[FlatVoxel<'_>],
    cam: &CameraModel,
    tile_size: u32,
) -> Result<Vec<TileBin>> {
    Ok(bin_with_projections(voxels, cam, tile_size)?.0)
}

fn bin_with_projections(
    voxels: &[FlatVoxel<'_>],
    cam: &CameraModel,
    tile_size: u32,
) -> Result<(Vec<TileBin>, Vec<Option<Projection>>)> {
    check_pinhole(cam)?;
    if tile_size == 0 {
        return Err(SalfError::InvalidConfig(
            "tile size must be positive".into(),
        ));
    }
    let [tx, ty] = tile_grid(cam, tile_size);
    let projections: Vec<Option<Projection>> = voxels
        .par_iter()
        .map(|v| project_voxel(&v.geom, cam))
        .collect();
    let mut bins: Vec<TileBin> = (0..ty)
        .flat_map(|y| {
            (0..tx).map(move |x| TileBin {
                tile: [x, y],
                voxels: Vec::new(),
            })
        })
        .collect();
    for (i, p) in projections.iter().enumerate() {
        let Some(p) = p else { continue };
        for y in p.min_px[1] / tile_size..=p.max_px[1] / tile_size {
            for x in p.min_px[0] / tile_size..=p.max_px[0] / tile_size {
                bins[(y * tx + x) as usize].voxels.push(i as u32);
            }
        }
    }
    bins.par_iter_mut().for_each(|b| {
        b.voxels.sort_by(|&a, &c| {
            let da = projections[a as usize].map_or(0.0, |p| p.depth);
            let dc = projections[c as usize].map_or(0.0, |p| p.depth);
            da.total_cmp(&dc).then(a.cmp(&c))
        });
    });
    Ok((bins, projections))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterOptions {
    pub background: Vec3,
    pub termination: f64,
    pub tile_size: u32,
    pub density_mode: DensityMode,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            background: Vec3::zeros(),
            termination: TERMINATION_OPACITY,
            tile_size: DEFAULT_TILE_SIZE,
            density_mode: DensityMode::Sdf,
        }
    }
}

/// Working copy of one voxel, staged per tile before the pixel loop.
struct Staged<'a> {
    geom: VoxelGeom,
    half: f64,
    params: &'a VoxelParams,
    min_px: [u32; 2],
    max_px: [u32; 2],
}

struct PixelOut {
    color: Vec3,
    opacity: f64,
    depth: Option<f64>,
}

fn shade_pixel(
    staged: &[Staged<'_>],
    px: [u32; 2],
    origin: &Vec3,
    dir: &Vec3,
    t_near: f64,
    opts: &RasterOptions,
) -> PixelOut {
    let mut comp = Compositor::new(opts.termination);
    for s in staged {
        if px[0] < s.min_px[0] || px[0] > s.max_px[0] || px[1] < s.min_px[1] || px[1] > s.max_px[1]
        {
            continue;
        }
        let o = s
            .geom
            .rotation
            .inverse_transform_vector(&(origin - s.geom.center));
        let d = s.geom.rotation.inverse_transform_vector(dir);
        let Some((t0, t1)) =
            ray_box_interval(&o, &d, &Vec3::repeat(-s.half), &Vec3::repeat(s.half))
        else {
            continue;
        };
        let t0 = t0.max(t_near);
        if t1 <= t0 {
            continue;
        }
        let mid_local = o + d * (0.5 * (t0 + t1));
        let x = mid_local / s.half;
        let sample = eval_point(&x, &d, s.params, opts.density_mode);
        let alpha = segment_opacity(sample.sigma, t1 - t0);
        comp.add(alpha, &sample.color, 0.5 * (t0 + t1));
        if comp.done() {
            break;
        }
    }
    let rec = comp.finish(opts.background, Vec::new(), false);
    PixelOut {
        color: rec.color,
        opacity: rec.opacity,
        depth: super::render_depth(&rec),
    }
}

/// Rasterizes a flattened voxel list (actor voxels already posed) with a
/// global-shutter pinhole camera.
pub fn rasterize(
    voxels: &[FlatVoxel<'_>],
    cam: &CameraModel,
    opts: &RasterOptions,
) -> Result<Framebuffer> {
    let (bins, projections) = bin_with_projections(voxels, cam, opts.tile_size)?;
    let ts = opts.tile_size;
    let origin = cam.pose.translation;
    let tiles: Vec<Vec<(usize, PixelOut)>> = bins
        .par_iter()
        .map(|bin| {
            let staged: Vec<Staged<'_>> = bin
                .voxels
                .iter()
                .map(|&i| {
                    let v = &voxels[i as usize];
                    let p = projections[i as usize].expect("binned voxels have a projection");
                    Staged {
                        geom: v.geom,
                        half: 0.5 * v.geom.edge,
                        params: v.params,
                        min_px: p.min_px,
                        max_px: p.max_px,
                    }
                })
                .collect();
            let x0 = bin.tile[0] * ts;
            let y0 = bin.tile[1] * ts;
            let mut out = Vec::with_capacity((ts * ts) as usize);
            for row in y0..(y0 + ts).min(cam.height) {
                for col in x0..(x0 + ts).min(cam.width) {
                    let d_cam = cam
                        .pixel_direction(f64::from(col) + 0.5, f64::from(row) + 0.5)
                        .unwrap_or_else(Vec3::z);
                    let dir = cam.pose.transform_vector(&d_cam);
                    let t_near = NEAR_PLANE / d_cam.z;
                    let idx = row as usize * cam.width as usize + col as usize;
                    out.push((
                        idx,
                        shade_pixel(&staged, [col, row], &origin, &dir, t_near, opts),
                    ));
                }
            }
            out
        })
        .collect();
    let mut fb = Framebuffer::new(cam.width, cam.height, opts.background);
    for (idx, px) in tiles.into_iter().flatten() {
        fb.color[idx] = px.color;
        fb.opacity[idx] = px.opacity;
        fb.depth[idx] = px.depth;
    }
    Ok(fb)
}

/// Flattens `scene` at time `t` and rasterizes it.
pub fn rasterize_scene(
    scene: &Scene,
    cam: &CameraModel,
    t: f64,
    opts: &RasterOptions,
) -> Result<Framebuffer> {
    let flat = flatten_scene(scene, t);
    let opts = RasterOptions {
        density_mode: scene.density_mode,
        ..*opts
    };
    rasterize(&flat, cam, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::RigidPose;
    use crate::scene::SceneBounds;

    fn cam_at_origin() -> CameraModel {
        CameraModel::pinhole(128, 128, 100.0, 100.0, 64.0, 64.0, RigidPose::identity())
    }

    fn geom_at(center: Vec3, edge: f64) -> VoxelGeom {
        let b = SceneBounds::new(
            center - Vec3::repeat(edge / 2.0),
            center + Vec3::repeat(edge / 2.0),
            edge,
            1,
        )
        .unwrap();
        b.geom(0, [0, 0, 0])
    }

    #[test]
    fn center_projects_to_principal_point() {
        let p = project_voxel(&geom_at(Vec3::new(0.0, 0.0, 10.0), 1.0), &cam_at_origin()).unwrap();
        let (u, v) = p.center_px.unwrap();
        assert!((u - 64.0).abs() < 1e-12 && (v - 64.0).abs() < 1e-12);
        assert_eq!(p.depth, 10.0);
        // Near face at z = 9.5 spans 100 / 9.5 ~ 10.5 px; plus padding.
        let width = p.max_px[0] - p.min_px[0];
        assert!(width >= 10 && width <= 14, "{width}");
    }

    #[test]
    fn behind_camera_is_culled() {
        assert!(
            project_voxel(&geom_at(Vec3::new(0.0, 0.0, -5.0), 1.0), &cam_at_origin()).is_none()
        );
    }

    #[test]
    fn straddling_near_plane_covers_screen() {
        let p = project_voxel(&geom_at(Vec3::new(0.0, 0.0, 0.0), 1.0), &cam_at_origin()).unwrap();
        assert_eq!(p.min_px, [0, 0]);
        assert_eq!(p.max_px, [127, 127]);
    }

    #[test]
    fn straddling_voxel_beside_camera_is_clipped() {
        // In front of the near plane it only spans x/z >= 5, far off screen.
        assert!(project_voxel(&geom_at(Vec3::new(3.0, 0.0, 0.0), 1.0), &cam_at_origin()).is_none());
        // Clipped at z = 0.05: x in [0.5, 1.5] projects to u >= 64 + 100 * 0.5 / 1.5.
        let p = project_voxel(&geom_at(Vec3::new(1.0, 0.0, 1.0), 1.0), &cam_at_origin()).unwrap();
        assert_eq!(p.min_px[0], (64.0 + 100.0 / 3.0 - 1.0f64).floor() as u32);
        assert_eq!(p.max_px, [127, 127]);
        assert_eq!(p.min_px[1], 0);
    }

    #[test]
    fn binning_single_tile() {
        let params = VoxelParams::zeros();
        let flat = [FlatVoxel {
            geom: geom_at(Vec3::new(-4.0, -4.0, 100.0), 0.5),
            params: &params,
            owner: Owner::Static,
            index: 0,
        }];
        let bins = cull_and_bin(&flat, &cam_at_origin(), 16).unwrap();
        assert_eq!(bins.len(), 64);
        assert_eq!(bins.iter().filter(|b| !b.voxels.is_empty()).count(), 1);
        assert!(cull_and_bin(&[], &cam_at_origin(), 16)
            .unwrap()
            .iter()
            .all(|b| b.voxels.is_empty()));
    }

    #[test]
    fn non_pinhole_rejected() {
        let cam = CameraModel::equirect(64, 32, RigidPose::identity());
        assert!(matches!(
            rasterize(&[], &cam, &RasterOptions::default()),
            Err(SalfError::UnsupportedSensor(_))
        ));
    }

    #[test]
    fn empty_scene_is_background() {
        let opts = RasterOptions {
            background: Vec3::new(0.2, 0.3, 0.4),
            ..Default::default()
        };
        let fb = rasterize(&[], &cam_at_origin(), &opts).unwrap();
        assert!(fb.color.iter().all(|c| *c == opts.background));
        assert!(fb.depth.iter().all(Option::is_none));
    }
}
