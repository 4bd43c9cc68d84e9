//! Optimization of voxel parameters from posed images and LiDAR ranges.

pub mod adam;
pub mod backward;
pub mod densify;
pub mod gradcheck;
pub mod init;
pub mod loss;
mod trainer;

use crate::error::{Result, SalfError};
use crate::math::Vec3;
use crate::render::Owner;
use crate::scene::{Scene, VoxelParams};
use crate::sensors::Ray;

pub use adam::{adam_step, learning_rate, AdamConfig, OptimState};
pub use backward::{backward, backward_ray, RayLossGrad};
pub use densify::{densify_and_prune, DensifyConfig, DensifyReport};
pub use init::{init_multiscale, InitConfig};
pub use loss::{
    face_pairs, loss_color, loss_depth, loss_eikonal, loss_empty, loss_opacity_lidar, loss_smooth,
    FacePair, LossWeights,
};
pub use trainer::{train_loop, train_loop_with, StepLog, TrainConfig, TrainData};

/// Per-voxel gradients, laid out like the scene's voxel sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub static_grads: Vec<VoxelParams>,
    pub actor_grads: Vec<Vec<VoxelParams>>,
}

impl ParamGrads {
    pub fn zeros_like(scene: &Scene) -> Self {
        Self {
            static_grads: vec![VoxelParams::zeros(); scene.voxels.len()],
            actor_grads: scene
                .actors
                .iter()
                .map(|a| vec![VoxelParams::zeros(); a.voxels.len()])
                .collect(),
        }
    }

    pub fn get_mut(&mut self, owner: Owner, index: usize) -> &mut VoxelParams {
        match owner {
            Owner::Static => &mut self.static_grads[index],
            Owner::Actor(a) => &mut self.actor_grads[a][index],
        }
    }

    pub fn get(&self, owner: Owner, index: usize) -> &VoxelParams {
        match owner {
            Owner::Static => &self.static_grads[index],
            Owner::Actor(a) => &self.actor_grads[a][index],
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.static_grads.iter_mut().zip(&other.static_grads) {
            a.add_scaled(b, 1.0);
        }
        for (sa, sb) in self.actor_grads.iter_mut().zip(&other.actor_grads) {
            for (a, b) in sa.iter_mut().zip(sb) {
                a.add_scaled(b, 1.0);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.static_grads.iter().all(VoxelParams::is_finite)
            && self
                .actor_grads
                .iter()
                .flatten()
                .all(VoxelParams::is_finite)
    }
}

/// A sampled training batch: camera rays with target colors and LiDAR rays
/// with target ranges (`None` for no return).
#[derive(Clone, Debug, Default)]
pub struct TrainBatch {
    pub camera_rays: Vec<Ray>,
    pub colors: Vec<Vec3>,
    pub lidar_rays: Vec<Ray>,
    pub ranges: Vec<Option<f64>>,
    /// Sensor index per camera ray.
    pub camera_ids: Vec<usize>,
}

impl TrainBatch {
    pub fn validate(&self) -> Result<()> {
        if self.camera_rays.len() != self.colors.len() || self.lidar_rays.len() != self.ranges.len()
        {
            return Err(SalfError::ShapeMismatch(
                "batch rays and targets differ in length".into(),
            ));
        }
        if self
            .colors
            .iter()
            .any(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(SalfError::InvalidConfig(
                "target colors must lie in [0, 1]".into(),
            ));
        }
        if self.ranges.iter().flatten().any(|r| !(*r > 0.0)) {
            return Err(SalfError::InvalidConfig(
                "target ranges must be positive".into(),
            ));
        }
        Ok(())
    }
}
