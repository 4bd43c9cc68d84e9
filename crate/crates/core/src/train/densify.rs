//! Pruning of transparent voxels and octree-aligned splitting of voxels
//! with large color-field gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalfError};
use crate::math::Vec3;
use crate::scene::{
    child_ijks, eval_point, segment_opacity, Scene, SparseVoxelSet, VoxelKey, VoxelParams,
};

use super::adam::{Moments, OptimState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Maximum number of static voxels.
    pub budget: usize,
    pub prune_opacity: f64,
    /// Denominator of the split-count formula (children per split times a
    /// rate of five).
    pub split_denominator: usize,
    /// Steps between rounds; gradient norms accumulate over this window.
    pub interval: usize,
    /// Fraction of the total steps after which no more rounds run.
    pub stop_fraction: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            budget: 2_500_000,
            prune_opacity: 0.005,
            split_denominator: 40,
            interval: 400,
            stop_fraction: 0.8,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0
            || self.split_denominator == 0
            || self.interval == 0
            || !(0.0..=1.0).contains(&self.stop_fraction)
            || !(self.prune_opacity >= 0.0)
        {
            return Err(SalfError::InvalidConfig(format!(
                "bad densification settings {self:?}"
            )));
        }
        Ok(())
    }

    /// Whether a round runs after the zero-based `step` of `total`.
    pub fn round_due(&self, step: usize, total: usize) -> bool {
        let done = step + 1;
        done % self.interval == 0 && (done as f64) <= self.stop_fraction * total as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyReport {
    pub before: usize,
    pub pruned: usize,
    /// Number of voxels the split formula asked for.
    pub split_target: usize,
    pub split: usize,
    /// Candidates passed over because they are already at the deepest level.
    pub skipped_depth: usize,
    pub after: usize,
}

/// `floor((M + N_prune - N) / denominator)`, zero when negative.
pub fn split_count(budget: usize, n_prune: usize, n: usize, denominator: usize) -> usize {
    (budget + n_prune).saturating_sub(n) / denominator
}

/// Opacity of a voxel evaluated at its center over its own edge length.
pub fn center_opacity(scene: &Scene, idx: usize) -> f64 {
    let s = eval_point(
        &Vec3::zeros(),
        &Vec3::z(),
        scene.voxels.param(idx),
        scene.density_mode,
    );
    segment_opacity(s.sigma, scene.voxels.geom(idx).edge)
}

/// One round over the static voxels. `grad_norms` holds the accumulated
/// color-gradient norm per voxel. Split parents are replaced by their eight
/// children, which inherit the parent's parameters and start with zeroed
/// optimizer moments. Surviving voxels keep their relative order and the
/// children are appended in parent order.
pub fn densify_and_prune(
    scene: &mut Scene,
    grad_norms: &[f64],
    state: Option<&mut OptimState>,
    cfg: &DensifyConfig,
) -> Result<DensifyReport> {
    cfg.validate()?;
    let n = scene.voxels.len();
    if grad_norms.len() != n {
        return Err(SalfError::ShapeMismatch(format!(
            "{} gradient norms for {n} voxels",
            grad_norms.len()
        )));
    }
    if let Some(st) = &state {
        if st.static_moments.len() != n {
            return Err(SalfError::ShapeMismatch(
                "optimizer state does not match the voxel set".into(),
            ));
        }
    }
    let keep: Vec<bool> = (0..n)
        .map(|i| center_opacity(scene, i) >= cfg.prune_opacity)
        .collect();
    let n_prune = keep.iter().filter(|k| !**k).count();
    let target = split_count(cfg.budget, n_prune, n, cfg.split_denominator);

    let mut order: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    order.sort_by(|&a, &b| grad_norms[b].total_cmp(&grad_norms[a]).then(a.cmp(&b)));
    let max_levels = scene.bounds.max_levels;
    let mut split = vec![false; n];
    let mut count = n - n_prune;
    let (mut n_split, mut skipped) = (0, 0);
    for &i in &order {
        if n_split == target || count + 7 > cfg.budget {
            break;
        }
        if scene.voxels.geom(i).level + 1 >= max_levels {
            skipped += 1;
            continue;
        }
        split[i] = true;
        n_split += 1;
        count += 7;
    }

    let mut keys: Vec<VoxelKey> = Vec::with_capacity(count);
    let mut params: Vec<VoxelParams> = Vec::with_capacity(count);
    let mut moments: Vec<Moments> = Vec::with_capacity(count);
    let old_moments = state.as_ref().map(|s| s.static_moments.as_slice());
    for i in (0..n).filter(|&i| keep[i] && !split[i]) {
        let g = scene.voxels.geom(i);
        keys.push((g.level, g.ijk));
        params.push(*scene.voxels.param(i));
        moments.push(old_moments.map_or_else(Moments::default, |m| m[i]));
    }
    for i in (0..n).filter(|&i| split[i]) {
        let g = scene.voxels.geom(i);
        for c in child_ijks(g.ijk) {
            keys.push((g.level + 1, c));
            params.push(*scene.voxels.param(i));
            moments.push(Moments::default());
        }
    }
    scene.voxels =
        SparseVoxelSet::from_parts(&scene.bounds, &keys, params, cfg.budget.max(keys.len()))?;
    if let Some(st) = state {
        st.static_moments = moments;
    }
    Ok(DensifyReport {
        before: n,
        pruned: n_prune,
        split_target: target,
        split: n_split,
        skipped_depth: skipped,
        after: scene.voxels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_formula() {
        assert_eq!(split_count(1000, 0, 100, 40), 22);
        assert_eq!(split_count(1000, 30, 100, 40), 23);
        assert_eq!(split_count(100, 0, 500, 40), 0);
    }

    #[test]
    fn cadence_stops_at_fraction() {
        let cfg = DensifyConfig::default();
        let due: Vec<usize> = (0..3200).filter(|&s| cfg.round_due(s, 3200)).collect();
        assert_eq!(due, vec![399, 799, 1199, 1599, 1999, 2399]);
    }
}
