//! Loss terms and their gradients.
//!
//! Every regularizer returns its value and accumulates `weight * dL/dparams`
//! into a gradient buffer when one is given.

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::render::{render_depth, RenderRecord};
use crate::scene::field::{backprop_color, backprop_density};
use crate::scene::{
    eval_color, eval_point, eval_sdf, segment_opacity, DensityMode, SceneBounds, SparseVoxelSet,
    VoxelParams, MAX_ALPHA,
};

use super::backward::RayLossGrad;

/// Traversal distance used by the LiDAR opacity term, in meters.
pub const LIDAR_OPACITY_DISTANCE: f64 = 0.2;
/// Fraction of outer voxels, lowest opacity first, pushed towards empty.
pub const EMPTY_QUANTILE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub color: f64,
    pub depth: f64,
    pub eikonal: f64,
    pub smooth: f64,
    pub opacity: f64,
    pub empty: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            color: 1.0,
            depth: 10.0,
            eikonal: 0.1,
            smooth: 3.0,
            opacity: 10.0,
            empty: 0.1,
        }
    }
}

impl LossWeights {
    pub fn is_valid(&self) -> bool {
        [
            self.color,
            self.depth,
            self.eikonal,
            self.smooth,
            self.opacity,
            self.empty,
        ]
        .iter()
        .all(|w| *w >= 0.0 && w.is_finite())
    }
}

/// Mean absolute color error over rays and channels, with the per-ray
/// gradient (scaled by `weight`).
pub fn loss_color(records: &[RenderRecord], gt: &[Vec3], weight: f64) -> (f64, Vec<Vec3>) {
    let n = records.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let scale = weight / (3 * n) as f64;
    let mut sum = 0.0;
    let grads = records
        .iter()
        .zip(gt)
        .map(|(r, g)| {
            let d = r.color - g;
            sum += d.abs().sum();
            d.map(|v| sign0(v) * scale)
        })
        .collect();
    (sum / (3 * n) as f64, grads)
}

/// Mean absolute range error over rays where both the render and the target
/// have a return. Returns the loss, per-ray depth gradients (scaled by
/// `weight`) and the number of contributing rays.
pub fn loss_depth(
    records: &[RenderRecord],
    gt: &[Option<f64>],
    weight: f64,
) -> (f64, Vec<f64>, usize) {
    let pairs: Vec<Option<(f64, f64)>> = records
        .iter()
        .zip(gt)
        .map(|(r, g)| Some((render_depth(r)?, (*g)?)))
        .collect();
    let n = pairs.iter().flatten().count();
    if n == 0 {
        return (0.0, vec![0.0; records.len()], 0);
    }
    let mut sum = 0.0;
    let grads = pairs
        .iter()
        .map(|p| match p {
            Some((d, g)) => {
                sum += (d - g).abs();
                sign0(d - g) * weight / n as f64
            }
            None => 0.0,
        })
        .collect();
    (sum / n as f64, grads, n)
}

/// Per-ray gradients combining color and depth terms.
pub fn combine_ray_grads(d_color: &[Vec3], d_depth: &[f64]) -> Vec<RayLossGrad> {
    let n = d_color.len().max(d_depth.len());
    (0..n)
        .map(|i| RayLossGrad {
            d_color: d_color.get(i).copied().unwrap_or_else(Vec3::zeros),
            d_depth: d_depth.get(i).copied().unwrap_or(0.0),
        })
        .collect()
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean `| |W_s[0..3]| - 1 |` over the given voxels.
pub fn loss_eikonal(
    set: &SparseVoxelSet,
    voxels: &[usize],
    weight: f64,
    mut grads: Option<&mut [VoxelParams]>,
) -> f64 {
    if voxels.is_empty() {
        return 0.0;
    }
    let n = voxels.len() as f64;
    let mut sum = 0.0;
    for &v in voxels {
        let w = &set.param(v).w_s;
        let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        sum += (norm - 1.0).abs();
        if let Some(g) = grads.as_deref_mut() {
            if norm > 0.0 {
                let k = weight * sign0(norm - 1.0) / (n * norm);
                for j in 0..3 {
                    g[v].w_s[j] += k * w[j];
                }
            }
        }
    }
    sum / n
}

/// Two face-adjacent voxels; `fine` has level at least that of `coarse`
/// and `axis`/`dir` name the face of `fine` they share.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FacePair {
    pub fine: usize,
    pub coarse: usize,
    pub axis: usize,
    /// +1 when `coarse` lies on the positive side of `fine`.
    pub dir: i8,
}

/// All face adjacencies between a voxel and a same-level or coarser
/// neighbor. Same-level pairs are listed once.
pub fn face_pairs(set: &SparseVoxelSet) -> Vec<FacePair> {
    let mut out = Vec::new();
    for (i, g) in set.geoms().iter().enumerate() {
        for axis in 0..3 {
            for dir in [-1i8, 1] {
                let mut n = g.ijk;
                n[axis] += i32::from(dir);
                let Some(j) = set.find_covering(g.level, n) else {
                    continue;
                };
                let other = set.geom(j);
                if other.level == g.level && (dir < 0) {
                    continue;
                }
                out.push(FacePair {
                    fine: i,
                    coarse: j,
                    axis,
                    dir,
                });
            }
        }
    }
    out
}

/// The four corners of `fine`'s shared face, in world coordinates.
fn face_corners(set: &SparseVoxelSet, pair: &FacePair) -> [Vec3; 4] {
    let g = set.geom(pair.fine);
    let h = 0.5 * g.edge;
    let (u, v) = ((pair.axis + 1) % 3, (pair.axis + 2) % 3);
    let mut out = [g.center; 4];
    for (k, p) in out.iter_mut().enumerate() {
        let mut off = Vec3::zeros();
        off[pair.axis] = h * f64::from(pair.dir);
        off[u] = if k & 1 == 0 { -h } else { h };
        off[v] = if k & 2 == 0 { -h } else { h };
        *p = g.center + g.rotation * off;
    }
    out
}

/// Mean absolute SDF and color mismatch across shared faces, sampled at the
/// finer voxel's face corners with the face normal as view direction.
pub fn loss_smooth(
    set: &SparseVoxelSet,
    pairs: &[FacePair],
    weight: f64,
    mut grads: Option<&mut [VoxelParams]>,
) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let n_pts = (pairs.len() * 4) as f64;
    let mut sum_s = 0.0;
    let mut sum_c = 0.0;
    for pair in pairs {
        let gf = set.geom(pair.fine);
        let gc = set.geom(pair.coarse);
        let (pf, pc) = (set.param(pair.fine), set.param(pair.coarse));
        let mut normal = Vec3::zeros();
        normal[pair.axis] = f64::from(pair.dir);
        let nf = gf
            .rotation
            .inverse_transform_vector(&(gf.rotation * normal));
        let nc = gc
            .rotation
            .inverse_transform_vector(&(gf.rotation * normal));
        for p in face_corners(set, pair) {
            let xf = crate::scene::world_to_local(&p, gf);
            let xc = crate::scene::world_to_local(&p, gc);
            let ds = eval_sdf(&xf, pf) - eval_sdf(&xc, pc);
            let cf = eval_color(&xf, &nf, pf);
            let cc = eval_color(&xc, &nc, pc);
            let dc = cf - cc;
            sum_s += ds.abs();
            sum_c += dc.abs().sum();
            if let Some(g) = grads.as_deref_mut() {
                let ks = weight * sign0(ds) / n_pts;
                if ks != 0.0 {
                    for (x, idx, sgn) in [(xf, pair.fine, 1.0), (xc, pair.coarse, -1.0)] {
                        let w = &mut g[idx].w_s;
                        w[0] += sgn * ks * x.x;
                        w[1] += sgn * ks * x.y;
                        w[2] += sgn * ks * x.z;
                        w[3] += sgn * ks;
                    }
                }
                let kc = weight / (3.0 * n_pts);
                let d = dc.map(|v| sign0(v) * kc);
                backprop_color(&xf, &nf, &cf, &d, &mut g[pair.fine]);
                backprop_color(&xc, &nc, &cc, &(-d), &mut g[pair.coarse]);
            }
        }
    }
    sum_s / n_pts + sum_c / (3.0 * n_pts)
}

/// Mean transparency `exp(-sigma d)` over a short traversal `d` at each
/// LiDAR point, evaluated in the voxel containing it. `points` pairs a
/// voxel index with the point's local coordinates.
pub fn loss_opacity_lidar(
    set: &SparseVoxelSet,
    points: &[(usize, Vec3)],
    mode: DensityMode,
    weight: f64,
    mut grads: Option<&mut [VoxelParams]>,
) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let mut sum = 0.0;
    for (v, x) in points {
        let p = set.param(*v);
        let s = eval_point(x, &Vec3::z(), p, mode);
        let transparency = (-s.sigma * LIDAR_OPACITY_DISTANCE).exp();
        sum += transparency;
        if let Some(g) = grads.as_deref_mut() {
            let d_sigma = -weight / n * LIDAR_OPACITY_DISTANCE * transparency;
            backprop_density(x, s.sdf, s.sigma, d_sigma, p, mode, &mut g[*v]);
        }
    }
    sum / n
}

/// Mean opacity of the lowest [`EMPTY_QUANTILE`] of the given outer voxels,
/// each evaluated at its center over a traversal of its own edge length.
pub fn loss_empty(
    set: &SparseVoxelSet,
    voxels: &[usize],
    mode: DensityMode,
    weight: f64,
    mut grads: Option<&mut [VoxelParams]>,
) -> f64 {
    if voxels.is_empty() {
        return 0.0;
    }
    let mut ops: Vec<(f64, usize)> = voxels
        .iter()
        .map(|&v| {
            let s = eval_point(&Vec3::zeros(), &Vec3::z(), set.param(v), mode);
            (segment_opacity(s.sigma, set.geom(v).edge), v)
        })
        .collect();
    ops.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = ((voxels.len() as f64 * EMPTY_QUANTILE).ceil() as usize).clamp(1, voxels.len());
    let sum: f64 = ops[..k].iter().map(|o| o.0).sum();
    if let Some(g) = grads.as_deref_mut() {
        for &(alpha, v) in &ops[..k] {
            if alpha >= MAX_ALPHA {
                continue;
            }
            let p = set.param(v);
            let x = Vec3::zeros();
            let s = eval_point(&x, &Vec3::z(), p, mode);
            let d_sigma = weight / k as f64 * set.geom(v).edge * (1.0 - alpha);
            backprop_density(&x, s.sdf, s.sigma, d_sigma, p, mode, &mut g[v]);
        }
    }
    sum / k as f64
}

/// Voxel and local coordinates for every point that falls inside a stored
/// voxel.
pub fn locate_points(
    set: &SparseVoxelSet,
    bounds: &SceneBounds,
    points: &[Vec3],
) -> Vec<(usize, Vec3)> {
    let deepest = bounds.max_levels - 1;
    points
        .iter()
        .filter_map(|p| {
            let cell = bounds.cell_of(deepest, p);
            let v = set.find_covering(deepest, cell)?;
            Some((v, crate::scene::world_to_local(p, set.geom(v))))
        })
        .collect()
}
