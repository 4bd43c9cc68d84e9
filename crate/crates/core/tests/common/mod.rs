#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salf_core::math::Vec3;
use salf_core::scene::{DensityMode, Scene, SceneBounds, SparseVoxelSet, VoxelParams};

/// Random non-overlapping multi-level voxel set inside an 8 m cube with a
/// 1 m base grid. Coarse cells are placed first, finer ones fill gaps.
pub fn random_set(seed: u64, target: usize) -> (SceneBounds, SparseVoxelSet) {
    let b = SceneBounds::new(Vec3::zeros(), Vec3::repeat(8.0), 1.0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SparseVoxelSet::new(target);
    for level in 0..3u8 {
        let n = 8 << level;
        for _ in 0..target * 2 {
            if set.len() >= target * (usize::from(level) + 1) / 3 {
                break;
            }
            let ijk = [
                rng.gen_range(0..n),
                rng.gen_range(0..n),
                rng.gen_range(0..n),
            ];
            let (a, bb) = (rng.gen_range(0.5..20.0), rng.gen_range(0.05..0.5));
            let p = VoxelParams::random(&mut rng, a, bb);
            let _ = set.insert(&b, level, ijk, p);
        }
    }
    (b, set)
}

pub fn random_scene(seed: u64, target: usize, mode: DensityMode) -> Scene {
    let (b, set) = random_set(seed, target);
    let mut scene = Scene::new(b, target);
    scene.voxels = set;
    scene.density_mode = mode;
    scene
}

pub fn random_dir<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}
