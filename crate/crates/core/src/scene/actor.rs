use serde::{Deserialize, Serialize};

use crate::error::{Result, SalfError};
use crate::math::{RigidPose, Vec3};

use super::{SceneBounds, SparseVoxelSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    pub pose: RigidPose,
}

/// A dynamic object: voxels live in a canonical frame centered on the
/// actor's bounding box and are placed in the world by the trajectory.
#[derive(Clone, Debug)]
pub struct Actor {
    pub id: u32,
    pub extents: Vec3,
    /// Canonical-frame grid spanning `[-extents/2, extents/2]`.
    pub bounds: SceneBounds,
    pub voxels: SparseVoxelSet,
    pub trajectory: Vec<Keyframe>,
}

impl Actor {
    pub fn new(
        id: u32,
        extents: Vec3,
        base_edge: f64,
        max_levels: u8,
        trajectory: Vec<Keyframe>,
        budget: usize,
    ) -> Result<Self> {
        let bounds = SceneBounds::new(-extents * 0.5, extents * 0.5, base_edge, max_levels)?;
        let actor = Self {
            id,
            extents,
            bounds,
            voxels: SparseVoxelSet::new(budget),
            trajectory,
        };
        actor.validate_trajectory()?;
        Ok(actor)
    }

    pub fn validate_trajectory(&self) -> Result<()> {
        if self.trajectory.is_empty() {
            return Err(SalfError::InvalidTrajectory("trajectory is empty".into()));
        }
        for w in self.trajectory.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(SalfError::InvalidTrajectory(format!(
                    "timestamps must be strictly increasing ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        if let Some(k) = self.trajectory.iter().find(|k| !k.pose.is_valid()) {
            return Err(SalfError::InvalidTrajectory(format!(
                "invalid rigid pose at t = {}",
                k.t
            )));
        }
        Ok(())
    }

    pub fn time_range(&self) -> (f64, f64) {
        (
            self.trajectory.first().map_or(0.0, |k| k.t),
            self.trajectory.last().map_or(0.0, |k| k.t),
        )
    }
}

/// Actor pose at `t`: linear in translation, slerp in rotation between the
/// bracketing keyframes. No extrapolation.
pub fn actor_pose_at(actor: &Actor, t: f64) -> Result<RigidPose> {
    let traj = &actor.trajectory;
    let (start, end) = actor.time_range();
    if traj.is_empty() || !(t >= start && t <= end) {
        return Err(SalfError::TimeOutOfRange { t, start, end });
    }
    // First keyframe with timestamp > t.
    let hi = traj.partition_point(|k| k.t <= t);
    if hi == 0 {
        return Ok(traj[0].pose);
    }
    let k0 = &traj[hi - 1];
    if k0.t == t || hi == traj.len() {
        return Ok(k0.pose);
    }
    let k1 = &traj[hi];
    let w = (t - k0.t) / (k1.t - k0.t);
    let translation = k0.pose.translation * (1.0 - w) + k1.pose.translation * w;
    let rotation = k0.pose.rotation.slerp(&k1.pose.rotation, w);
    Ok(RigidPose::new(rotation, translation))
}
