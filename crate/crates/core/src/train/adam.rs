//! Adam with a stepwise exponential learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalfError};
use crate::scene::{Scene, VoxelParams, PARAM_COUNT};

use super::ParamGrads;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_every` steps.
    pub decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            decay: 0.8,
            decay_every: 800,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.decay_every > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SalfError::InvalidConfig(format!(
                "bad optimizer settings {self:?}"
            )))
        }
    }
}

/// Learning rate at zero-based `step`: `lr0 * decay^floor(step / decay_every)`.
pub fn learning_rate(step: usize, cfg: &AdamConfig) -> f64 {
    let k = (step / cfg.decay_every) as i32;
    cfg.lr0 * cfg.decay.powi(k)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub m: [f64; PARAM_COUNT],
    pub v: [f64; PARAM_COUNT],
}

impl Default for Moments {
    fn default() -> Self {
        Self {
            m: [0.0; PARAM_COUNT],
            v: [0.0; PARAM_COUNT],
        }
    }
}

/// First and second moments per voxel, laid out like the scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub static_moments: Vec<Moments>,
    pub actor_moments: Vec<Vec<Moments>>,
    /// Number of updates applied so far.
    pub step: usize,
}

impl OptimState {
    pub fn new(scene: &Scene) -> Self {
        Self {
            static_moments: vec![Moments::default(); scene.voxels.len()],
            actor_moments: scene
                .actors
                .iter()
                .map(|a| vec![Moments::default(); a.voxels.len()])
                .collect(),
            step: 0,
        }
    }

    fn check_shape(&self, scene: &Scene, grads: &ParamGrads) -> Result<()> {
        let ok = self.static_moments.len() == scene.voxels.len()
            && grads.static_grads.len() == scene.voxels.len()
            && self.actor_moments.len() == scene.actors.len()
            && grads.actor_grads.len() == scene.actors.len()
            && scene
                .actors
                .iter()
                .zip(&self.actor_moments)
                .zip(&grads.actor_grads)
                .all(|((a, m), g)| a.voxels.len() == m.len() && a.voxels.len() == g.len());
        if ok {
            Ok(())
        } else {
            Err(SalfError::ShapeMismatch(
                "optimizer state, gradients and scene differ in size".into(),
            ))
        }
    }
}

fn update(
    p: &mut VoxelParams,
    g: &VoxelParams,
    mo: &mut Moments,
    lr: f64,
    c1: f64,
    c2: f64,
    cfg: &AdamConfig,
) {
    let mut x = p.to_flat();
    let g = g.to_flat();
    for i in 0..PARAM_COUNT {
        mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * g[i];
        mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = mo.m[i] / c1;
        let v_hat = mo.v[i] / c2;
        x[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    *p = VoxelParams::from_flat(&x);
}

/// One Adam update of every static and actor voxel. Bias correction uses the
/// global step count, including for moments reset by densification.
pub fn adam_step(
    scene: &mut Scene,
    grads: &ParamGrads,
    state: &mut OptimState,
    cfg: &AdamConfig,
) -> Result<()> {
    state.check_shape(scene, grads)?;
    let lr = learning_rate(state.step, cfg);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), mo) in scene
        .voxels
        .params_mut()
        .iter_mut()
        .zip(&grads.static_grads)
        .zip(&mut state.static_moments)
    {
        update(p, g, mo, lr, c1, c2, cfg);
    }
    for ((actor, ag), am) in scene
        .actors
        .iter_mut()
        .zip(&grads.actor_grads)
        .zip(&mut state.actor_moments)
    {
        for ((p, g), mo) in actor.voxels.params_mut().iter_mut().zip(ag).zip(am) {
            update(p, g, mo, lr, c1, c2, cfg);
        }
    }
    Ok(())
}
