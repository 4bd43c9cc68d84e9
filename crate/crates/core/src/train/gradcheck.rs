//! Central finite-difference checks of the rendering backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::math::Vec3;
use crate::render::ray::{integrate_rays, RenderOptions, SceneOctrees};
use crate::render::{render_depth, Owner, RenderRecord};
use crate::scene::{DensityMode, Scene, SceneBounds, SparseVoxelSet, VoxelParams, PARAM_COUNT};
use crate::sensors::Ray;

use super::{backward, RayLossGrad};

/// Parameter classes in flat layout order.
pub const PARAM_CLASSES: [(&str, std::ops::Range<usize>); 5] =
    [("W_s", 0..4), ("W_c", 4..13), ("W_sh", 13..25), ("log_a", 25..26), ("log_b", 26..27)];

/// Ten voxels over two levels in a 4 x 2 x 2 m box.
pub fn ten_voxel_scene(seed: u64, mode: DensityMode) -> Scene {
    let b = SceneBounds::new(Vec3::zeros(), Vec3::new(4.0, 2.0, 2.0), 1.0, 2).expect("fixture bounds are valid");
    let mut s = Scene::new(b, 64);
    s.density_mode = mode;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 1], [1, 1, 0], [3, 1, 1]];
    let fine = [[6, 0, 0], [7, 1, 1], [6, 1, 0], [7, 0, 1]];
    for c in coarse {
        let (a, bb) = (rng.gen_range(0.5..3.0), rng.gen_range(0.2..0.6));
        let mut p = VoxelParams::random(&mut rng, a, bb);
        if mode == DensityMode::Raw {
            p.w_s[3] = rng.gen_range(-1.5..0.5);
        }
        s.voxels.insert(&b, 0, c, p).expect("fixture voxels do not overlap");
    }
    for c in fine {
        let (a, bb) = (rng.gen_range(0.5..3.0), rng.gen_range(0.2..0.6));
        let p = VoxelParams::random(&mut rng, a, bb);
        s.voxels.insert(&b, 1, c, p).expect("fixture voxels do not overlap");
    }
    s
}

/// Rays crossing the fixture box along +x.
pub fn fixture_rays(seed: u64, n: usize) -> Vec<Ray> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let o = Vec3::new(-1.0, rng.gen_range(0.1..1.9), rng.gen_range(0.1..1.9));
            let target = Vec3::new(4.5, rng.gen_range(0.1..1.9), rng.gen_range(0.1..1.9));
            Ray::new(o, (target - o).normalize())
        })
        .collect()
}

/// A fixed linear functional of rendered colors and depths.
#[derive(Clone, Debug)]
pub struct Functional {
    pub d_color: Vec<Vec3>,
    pub d_depth: Vec<f64>,
}

impl Functional {
    pub fn random(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            d_color: (0..n)
                .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
            d_depth: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    pub fn eval(&self, records: &[RenderRecord]) -> f64 {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| self.d_color[i].dot(&r.color) + render_depth(r).map_or(0.0, |d| self.d_depth[i] * d))
            .sum()
    }

    pub fn grads(&self) -> Vec<RayLossGrad> {
        self.d_color
            .iter()
            .zip(&self.d_depth)
            .map(|(c, d)| RayLossGrad {
                d_color: *c,
                d_depth: *d,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub relative: f64,
    /// Absolute floor for entries whose true value is near zero.
    pub absolute: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-4,
            relative: 1e-3,
            absolute: 1e-7,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, fd: f64, analytic: f64) -> bool {
        (fd - analytic).abs() <= self.relative * fd.abs().max(analytic.abs()) + self.absolute
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub owner: Owner,
    pub voxel: usize,
    pub param: usize,
    pub fd: f64,
    pub analytic: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// Checked entries per parameter class, in [`PARAM_CLASSES`] order.
    pub checked: [usize; 5],
    /// Largest `|fd - analytic| / max(|fd|, |analytic|)` per class, over
    /// entries above the absolute floor.
    pub max_relative: [f64; 5],
    /// Voxels left out because a sample sits on the density kink.
    pub skipped_voxels: usize,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.checked.iter().all(|&n| n > 0)
    }

    pub fn total_checked(&self) -> usize {
        self.checked.iter().sum()
    }
}

fn opts() -> RenderOptions {
    RenderOptions {
        termination: 1.0,
        keep_segments: true,
        ..Default::default()
    }
}

fn render(scene: &Scene, rays: &[Ray]) -> Result<Vec<RenderRecord>> {
    let trees = SceneOctrees::build(scene)?;
    integrate_rays(scene, &trees, rays, &opts())
}

fn set_of(scene: &mut Scene, owner: Owner) -> &mut SparseVoxelSet {
    match owner {
        Owner::Static => &mut scene.voxels,
        Owner::Actor(a) => &mut scene.actors[a].voxels,
    }
}

fn perturb(scene: &Scene, owner: Owner, v: usize, k: usize, h: f64) -> Scene {
    let mut s = scene.clone();
    let set = set_of(&mut s, owner);
    let mut flat = set.param(v).to_flat();
    flat[k] += h;
    set.params_mut()[v] = VoxelParams::from_flat(&flat);
    s
}

/// Voxels that some segment samples within the kink band of the density
/// transform; central differences straddle it there.
fn kinked(records: &[RenderRecord]) -> Vec<(Owner, u32)> {
    let mut out: Vec<(Owner, u32)> = Vec::new();
    for s in records.iter().flat_map(|r| r.segments.iter()) {
        if s.sdf.abs() < 1e-6 && !out.contains(&(s.owner, s.voxel)) {
            out.push((s.owner, s.voxel));
        }
    }
    out
}

/// Compares every parameter gradient of `f` over rendered `rays` against
/// central differences, without early termination.
pub fn check_render_gradients(scene: &Scene, rays: &[Ray], f: &Functional, tol: &Tolerance) -> Result<GradCheckReport> {
    let records = render(scene, rays)?;
    let grads = backward(scene, &records, &f.grads())?;
    let skip = kinked(&records);
    let mut owners = vec![(Owner::Static, scene.voxels.len())];
    owners.extend(scene.actors.iter().enumerate().map(|(i, a)| (Owner::Actor(i), a.voxels.len())));
    let mut report = GradCheckReport {
        skipped_voxels: skip.len(),
        ..Default::default()
    };
    for (owner, n) in owners {
        for v in 0..n {
            if skip.contains(&(owner, v as u32)) {
                continue;
            }
            let an = grads.get(owner, v).to_flat();
            for (k, &a) in an.iter().enumerate().take(PARAM_COUNT) {
                let lp = f.eval(&render(&perturb(scene, owner, v, k, tol.step), rays)?);
                let lm = f.eval(&render(&perturb(scene, owner, v, k, -tol.step), rays)?);
                let fd = (lp - lm) / (2.0 * tol.step);
                let class = PARAM_CLASSES.iter().position(|(_, r)| r.contains(&k)).expect("classes cover all params");
                report.checked[class] += 1;
                let scale = fd.abs().max(a.abs());
                if scale > tol.absolute {
                    report.max_relative[class] = report.max_relative[class].max((fd - a).abs() / scale);
                }
                if !tol.accepts(fd, a) {
                    report.mismatches.push(Mismatch {
                        owner,
                        voxel: v,
                        param: k,
                        fd,
                        analytic: a,
                    });
                }
            }
        }
    }
    Ok(report)
}
