//! Octree ray-casting over the composed scene.

use std::ops::ControlFlow;

use rayon::prelude::*;

use crate::error::Result;
use crate::math::Vec3;
use crate::octree::{build_octree, march, march_with, ray_box_interval, OctreeBuffer, RaySegment};
use crate::scene::field::eval_point;
use crate::scene::{actor_pose_at, segment_opacity, world_to_local, Scene, SparseVoxelSet};
use crate::sensors::Ray;

use super::{Compositor, Framebuffer, Owner, RenderRecord, SegmentRecord, TERMINATION_OPACITY};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub background: Vec3,
    pub termination: f64,
    pub t_max: f64,
    /// Keep per-segment records for the backward pass.
    pub keep_segments: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: Vec3::zeros(),
            termination: TERMINATION_OPACITY,
            t_max: f64::INFINITY,
            keep_segments: false,
        }
    }
}

/// Octrees for the static set and every actor, indexed like
/// `Scene::actors`.
#[derive(Clone, Debug)]
pub struct SceneOctrees {
    pub static_tree: OctreeBuffer,
    pub actors: Vec<OctreeBuffer>,
}

impl SceneOctrees {
    pub fn build(scene: &Scene) -> Result<Self> {
        Ok(Self {
            static_tree: build_octree(&scene.voxels, &scene.bounds)?,
            actors: scene
                .actors
                .iter()
                .map(|a| build_octree(&a.voxels, &a.bounds))
                .collect::<Result<_>>()?,
        })
    }
}

/// One entry of a traversal plan: an owner, the ray interval it covers and
/// the ray expressed in the owner's frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanInterval {
    pub owner: Owner,
    pub t_entry: f64,
    pub t_exit: f64,
    pub origin: Vec3,
    pub dir: Vec3,
}

/// Ray intervals per octree owner, sorted by entry distance. The static
/// volume always comes first with `[0, inf)`. Actors whose trajectory does
/// not cover the ray timestamp are absent at that time and skipped.
pub fn compose_actor_traversal(scene: &Scene, ray: &Ray) -> Result<Vec<PlanInterval>> {
    let mut plan = vec![PlanInterval {
        owner: Owner::Static,
        t_entry: 0.0,
        t_exit: f64::INFINITY,
        origin: ray.origin,
        dir: ray.dir,
    }];
    for (idx, actor) in scene.actors.iter().enumerate() {
        let Ok(pose) = actor_pose_at(actor, ray.t_stamp) else {
            continue;
        };
        let origin = pose.inverse_transform_point(&ray.origin);
        let dir = pose.inverse_transform_vector(&ray.dir);
        let Some((t0, t1)) = ray_box_interval(
            &origin,
            &dir,
            &actor.bounds.aabb_min,
            &actor.bounds.aabb_max,
        ) else {
            continue;
        };
        if t1 < 0.0 {
            continue;
        }
        plan.push(PlanInterval {
            owner: Owner::Actor(idx),
            t_entry: t0.max(0.0),
            t_exit: t1,
            origin,
            dir,
        });
    }
    plan.sort_by(|a, b| a.t_entry.total_cmp(&b.t_entry).then(a.owner.cmp(&b.owner)));
    Ok(plan)
}

pub(crate) fn voxel_set(scene: &Scene, owner: Owner) -> &SparseVoxelSet {
    match owner {
        Owner::Static => &scene.voxels,
        Owner::Actor(i) => &scene.actors[i].voxels,
    }
}

struct Integrator<'a> {
    scene: &'a Scene,
    comp: Compositor,
    segments: Vec<SegmentRecord>,
    keep: bool,
}

impl Integrator<'_> {
    /// Composites one segment; `Break` once opacity reaches the threshold.
    fn push(&mut self, owner: Owner, seg: &RaySegment, dir: &Vec3) -> ControlFlow<()> {
        let set = voxel_set(self.scene, owner);
        let idx = seg.voxel as usize;
        let geom = set.geom(idx);
        let params = set.param(idx);
        let local = world_to_local(&seg.midpoint, geom);
        let omega = geom.rotation.inverse_transform_vector(dir);
        let sample = eval_point(&local, &omega, params, self.scene.density_mode);
        let delta = seg.delta();
        let alpha = segment_opacity(sample.sigma, delta);
        let t_before = self.comp.add(alpha, &sample.color, seg.t_mid());
        if self.keep {
            self.segments.push(SegmentRecord {
                voxel: seg.voxel,
                owner,
                t_entry: seg.t_entry,
                t_exit: seg.t_exit,
                local,
                omega,
                sdf: sample.sdf,
                sigma: sample.sigma,
                alpha,
                color: sample.color,
                transmittance: t_before,
            });
        }
        if self.comp.done() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }
}

/// Volume-renders one ray through the static octree and any actor octrees
/// it crosses, merging segments by entry distance and compositing front to
/// back until the opacity threshold.
pub fn integrate_ray(
    scene: &Scene,
    octrees: &SceneOctrees,
    ray: &Ray,
    opts: &RenderOptions,
) -> Result<RenderRecord> {
    if !ray.valid {
        return Ok(RenderRecord::background_only(opts.background));
    }
    let plan = compose_actor_traversal(scene, ray)?;
    let mut actor_segs: Vec<(RaySegment, Owner, Vec3)> = Vec::new();
    for interval in plan.iter().filter(|p| p.owner != Owner::Static) {
        let Owner::Actor(i) = interval.owner else {
            unreachable!()
        };
        for seg in march(
            &octrees.actors[i],
            &interval.origin,
            &interval.dir,
            opts.t_max,
        )? {
            actor_segs.push((seg, interval.owner, interval.dir));
        }
    }
    actor_segs.sort_by(|a, b| a.0.t_entry.total_cmp(&b.0.t_entry).then(a.1.cmp(&b.1)));

    let mut integ = Integrator {
        scene,
        comp: Compositor::new(opts.termination),
        segments: Vec::new(),
        keep: opts.keep_segments,
    };
    let mut next_actor = 0;
    let mut stopped = false;
    march_with(
        &octrees.static_tree,
        &ray.origin,
        &ray.dir,
        opts.t_max,
        |seg| {
            while next_actor < actor_segs.len() && actor_segs[next_actor].0.t_entry < seg.t_entry {
                let (aseg, owner, dir) = actor_segs[next_actor];
                next_actor += 1;
                if integ.push(owner, &aseg, &dir).is_break() {
                    stopped = true;
                    return ControlFlow::Break(());
                }
            }
            let flow = integ.push(Owner::Static, seg, &ray.dir);
            stopped = flow.is_break();
            flow
        },
    )?;
    if !stopped {
        for (aseg, owner, dir) in &actor_segs[next_actor..] {
            if integ.push(*owner, aseg, dir).is_break() {
                break;
            }
        }
    }
    let Integrator {
        comp,
        segments,
        keep,
        ..
    } = integ;
    Ok(comp.finish(opts.background, segments, keep))
}

/// Renders a batch of rays in parallel; output order matches input.
pub fn integrate_rays(
    scene: &Scene,
    octrees: &SceneOctrees,
    rays: &[Ray],
    opts: &RenderOptions,
) -> Result<Vec<RenderRecord>> {
    rays.par_iter()
        .map(|r| integrate_ray(scene, octrees, r, opts))
        .collect()
}

/// Renders a full row-major image from camera rays.
pub fn render_image(
    scene: &Scene,
    octrees: &SceneOctrees,
    rays: &[Ray],
    width: u32,
    height: u32,
    opts: &RenderOptions,
) -> Result<Framebuffer> {
    let opts = RenderOptions {
        keep_segments: false,
        ..*opts
    };
    let records = integrate_rays(scene, octrees, rays, &opts)?;
    let mut fb = Framebuffer::new(width, height, opts.background);
    for (i, r) in records.iter().enumerate() {
        fb.color[i] = r.color;
        fb.opacity[i] = r.opacity;
        fb.depth[i] = super::render_depth(r);
    }
    Ok(fb)
}
