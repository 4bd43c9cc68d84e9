use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salf_core::math::{Aabb, Vec3};
use salf_core::render::RenderRecord;
use salf_core::scene::{
    segment_opacity, DensityMode, Scene, SceneBounds, VoxelParams, A_EMPTY, A_OCCUPIED, PARAM_COUNT,
};
use salf_core::train::densify::{center_opacity, split_count};
use salf_core::train::{
    adam_step, densify_and_prune, init_multiscale, learning_rate, loss_color, loss_empty,
    train_loop, AdamConfig, DensifyConfig, InitConfig, OptimState, ParamGrads, TrainConfig,
    TrainData,
};

/// Textbook scalar Adam.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, x: f64, g: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let mh = self.m / (1.0 - b1.powi(self.t));
        let vh = self.v / (1.0 - b2.powi(self.t));
        x - lr * mh / (vh.sqrt() + eps)
    }
}

fn grid_scene(n: i32, levels: u8, budget: usize) -> Scene {
    let b = SceneBounds::new(
        Vec3::zeros(),
        Vec3::new(f64::from(n), 1.0, 1.0),
        1.0,
        levels,
    )
    .unwrap();
    let mut s = Scene::new(b, budget);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..n {
        let mut p = VoxelParams::random(&mut rng, 2.0, 0.2);
        p.w_s[3] = 0.5;
        s.voxels.insert(&b, 0, [i, 0, 0], p).unwrap();
    }
    s
}

#[test]
fn adam_matches_scalar_reference_over_ten_steps() {
    let mut scene = grid_scene(2, 1, 2);
    let cfg = AdamConfig::default();
    let mut state = OptimState::new(&scene);
    let mut refs: Vec<ScalarAdam> = (0..2 * PARAM_COUNT)
        .map(|_| ScalarAdam {
            m: 0.0,
            v: 0.0,
            t: 0,
        })
        .collect();
    let mut want: Vec<f64> = scene
        .voxels
        .params()
        .iter()
        .flat_map(|p| p.to_flat())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut grads = ParamGrads::zeros_like(&scene);
        let mut flat_g = Vec::new();
        for g in grads.static_grads.iter_mut() {
            let mut f = [0.0; PARAM_COUNT];
            for v in f.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            *g = VoxelParams::from_flat(&f);
            flat_g.extend(f);
        }
        let lr = learning_rate(state.step, &cfg);
        for (i, r) in refs.iter_mut().enumerate() {
            want[i] = r.step(want[i], flat_g[i], lr);
        }
        adam_step(&mut scene, &grads, &mut state, &cfg).unwrap();
    }
    let got: Vec<f64> = scene
        .voxels
        .params()
        .iter()
        .flat_map(|p| p.to_flat())
        .collect();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-10, "{g} vs {w}");
    }
}

#[test]
fn learning_rate_schedule_is_exact_at_boundaries() {
    let cfg = AdamConfig::default();
    let mut want = 0.01;
    for k in 0..5 {
        let got = learning_rate(800 * k, &cfg);
        assert!((got - want).abs() <= 1e-14 * want, "step {}: {got} vs {want}", 800 * k);
        if k > 0 {
            let before = learning_rate(800 * k - 1, &cfg);
            assert!((before - want / 0.8).abs() <= 1e-14 * want);
        }
        want *= 0.8;
    }
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut scene = grid_scene(3, 1, 3);
    let before = scene.voxels.params().to_vec();
    let mut st = OptimState::new(&scene);
    let g = ParamGrads::zeros_like(&scene);
    adam_step(&mut scene, &g, &mut st, &AdamConfig::default()).unwrap();
    assert_eq!(scene.voxels.params(), &before[..]);
}

#[test]
fn densify_hundred_voxels_by_hand() {
    let mut scene = grid_scene(100, 3, 1000);
    let norms = vec![0.0; 100];
    let cfg = DensifyConfig {
        budget: 1000,
        ..Default::default()
    };
    let r = densify_and_prune(&mut scene, &norms, None, &cfg).unwrap();
    assert_eq!((r.pruned, r.split_target, r.split), (0, 22, 22));
    assert_eq!(scene.voxels.len(), 254);
    // Equal norms fall back to index order: voxels 0..22 were split.
    for i in 0..22 {
        assert!(scene.voxels.index_of(0, [i, 0, 0]).is_none());
        assert!(scene.voxels.index_of(1, [2 * i + 1, 1, 1]).is_some());
    }
    assert!(scene.voxels.index_of(0, [22, 0, 0]).is_some());
}

#[test]
fn children_inherit_parameters_and_reset_moments() {
    let mut scene = grid_scene(4, 2, 100);
    let mut st = OptimState::new(&scene);
    for m in st.static_moments.iter_mut() {
        m.m = [1.0; PARAM_COUNT];
    }
    let parent = *scene.voxels.param(2);
    let norms = vec![0.0, 1.0, 5.0, 0.5];
    let cfg = DensifyConfig {
        budget: 100,
        ..Default::default()
    };
    // floor((100 - 4) / 40) = 2 splits: voxels 2 and 1.
    let r = densify_and_prune(&mut scene, &norms, Some(&mut st), &cfg).unwrap();
    assert_eq!(r.split, 2);
    assert_eq!(scene.voxels.len(), 2 + 16);
    let keys = scene.voxels.keys();
    assert_eq!(&keys[..2], &[(0, [0, 0, 0]), (0, [3, 0, 0])]);
    assert_eq!(keys[2].0, 1);
    assert_eq!(keys[2].1[0] / 2, 1);
    for i in 10..18 {
        assert_eq!(*scene.voxels.param(i), parent);
    }
    assert_eq!(st.static_moments.len(), 18);
    assert!(st.static_moments[..2].iter().all(|m| m.m[0] == 1.0));
    assert!(st.static_moments[2..].iter().all(|m| m.m[0] == 0.0));
}

#[test]
fn split_skips_voxels_at_the_deepest_level() {
    let mut scene = grid_scene(4, 1, 200);
    let cfg = DensifyConfig {
        budget: 200,
        ..Default::default()
    };
    let r = densify_and_prune(&mut scene, &[3.0, 2.0, 1.0, 0.0], None, &cfg).unwrap();
    assert_eq!((r.split, r.skipped_depth), (0, 4));
    assert_eq!(scene.voxels.len(), 4);
}

#[test]
fn prune_removes_transparent_voxels_only() {
    let mut scene = grid_scene(10, 2, 10);
    scene.density_mode = DensityMode::Raw;
    for (i, p) in scene.voxels.params_mut().iter_mut().enumerate() {
        *p = VoxelParams::zeros();
        // alpha = 1 - exp(-exp(w)) over a unit edge; w = -6 gives 0.0025.
        p.w_s[3] = if i % 3 == 0 { -6.0 } else { -4.0 };
    }
    let cfg = DensifyConfig {
        budget: 10,
        ..Default::default()
    };
    let r = densify_and_prune(&mut scene, &[0.0; 10], None, &cfg).unwrap();
    assert_eq!(r.pruned, 4);
    assert_eq!(scene.voxels.len(), 6);
    assert!((0..6).all(|i| center_opacity(&scene, i) >= 0.005));
}

#[test]
fn five_round_schedule_matches_hand_arithmetic() {
    let mut scene = grid_scene(100, 8, 1000);
    let cfg = DensifyConfig {
        budget: 1000,
        ..Default::default()
    };
    // N: 100 -> 254 -> 380 -> 485 -> 569 -> 639, splitting
    // floor((1000 - N) / 40) = 22, 18, 15, 12, 10.
    let want = [(22, 254), (18, 380), (15, 485), (12, 569), (10, 639)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (split, after) in want {
        let norms: Vec<f64> = (0..scene.voxels.len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let r = densify_and_prune(&mut scene, &norms, None, &cfg).unwrap();
        assert_eq!((r.split, r.after), (split, after));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn densify_respects_budget_depth_and_threshold(
        seed in 0u64..500,
        n in 1i32..60,
        budget_extra in 0usize..400,
        rounds in 1usize..5,
    ) {
        let budget = n as usize + budget_extra;
        let mut scene = grid_scene(n, 3, budget);
        scene.density_mode = DensityMode::Raw;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in scene.voxels.params_mut() {
            p.w_s[3] = rng.gen_range(-7.0..0.0);
        }
        let cfg = DensifyConfig { budget, ..Default::default() };
        for _ in 0..rounds {
            let before: Vec<(u8, [i32; 3], f64)> = (0..scene.voxels.len())
                .map(|i| {
                    let g = scene.voxels.geom(i);
                    (g.level, g.ijk, center_opacity(&scene, i))
                })
                .collect();
            let norms: Vec<f64> = (0..scene.voxels.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
            densify_and_prune(&mut scene, &norms, None, &cfg).unwrap();
            prop_assert!(scene.voxels.len() <= budget);
            prop_assert!(scene.voxels.geoms().iter().all(|g| g.level < 3));
            for (level, ijk, op) in before {
                let gone = scene.voxels.index_of(level, ijk).is_none()
                    && !scene.voxels.keys().iter().any(|k| k.0 == level + 1 && k.1.map(|c| c >> 1) == ijk);
                prop_assert!(!gone || op < 0.005);
            }
        }
    }
}

#[test]
fn split_formula_floor_and_clamp() {
    assert_eq!(split_count(1000, 0, 100, 40), 22);
    assert_eq!(split_count(1000, 20, 100, 40), 23);
    assert_eq!(split_count(500, 0, 500, 40), 0);
}

#[test]
fn init_single_point_micro_scene() {
    let boxes = [Aabb::new(Vec3::repeat(-5.0), Vec3::repeat(5.0))];
    let cfg = InitConfig {
        expand_up: 0.0,
        expand_down: 0.0,
        expand_lateral: 0.0,
        budget: 10_000,
        ..Default::default()
    };
    let scene = init_multiscale(&boxes, &[Vec3::zeros()], &cfg).unwrap();
    // Layers reach 6, 12, 24, 48 and 80 m; shells of edge 2, 4, 8 hold
    // 12^3 - 6^3 = 1512 cells each, the edge-16 shell 10^3 - 6^3 = 784.
    assert_eq!(scene.voxels.len(), 3 * 1512 + 784 + 8);
    let mut per_edge = std::collections::BTreeMap::new();
    for g in scene.voxels.geoms() {
        *per_edge.entry((g.edge * 2.0) as u32).or_insert(0) += 1;
    }
    let want: Vec<(u32, usize)> = vec![(1, 8), (4, 1512), (8, 1512), (16, 1512), (32, 784)];
    assert_eq!(per_edge.into_iter().collect::<Vec<_>>(), want);
    let with_point: Vec<usize> = (0..scene.voxels.len())
        .filter(|&i| {
            scene
                .voxels
                .geom(i)
                .aabb()
                .contains(&Vec3::new(0.1, 0.1, 0.1))
        })
        .collect();
    assert_eq!(with_point.len(), 1);
    assert!((scene.voxels.param(with_point[0]).a() - A_OCCUPIED).abs() < 1e-12);
    let fine = scene
        .voxels
        .geoms()
        .iter()
        .position(|g| g.edge == 0.5 && g.center.x < 0.0)
        .unwrap_or(usize::MAX);
    assert_eq!(fine, usize::MAX, "children must sit in the point's cell");
    let others = (0..scene.voxels.len()).filter(|&i| i != with_point[0]);
    assert!(others
        .into_iter()
        .all(|i| (scene.voxels.param(i).a() - A_EMPTY).abs() < 1e-12));
    assert_eq!(
        scene.inner_region,
        Some(Aabb::new(Vec3::repeat(-6.0), Vec3::repeat(6.0)))
    );
}

#[test]
fn init_shell_edges_double_per_layer() {
    let boxes = [Aabb::new(
        Vec3::new(-1.0, -1.0, 0.0),
        Vec3::new(1.0, 1.0, 1.0),
    )];
    let cfg = InitConfig {
        base_edge: 0.25,
        expand_up: 0.5,
        expand_down: 0.0,
        expand_lateral: 0.5,
        budget: 200_000,
        ..Default::default()
    };
    let pts = [Vec3::new(0.3, 0.2, 0.1), Vec3::new(-0.7, 0.4, 0.9)];
    let scene = init_multiscale(&boxes, &pts, &cfg).unwrap();
    for g in scene.voxels.geoms() {
        let outer = scene.is_outer(g);
        let k = (g.edge / 0.25).log2().round() as i32;
        if outer {
            assert!((1..=4).contains(&k));
        } else {
            assert_eq!(k, -1);
        }
    }
    assert_eq!(
        scene
            .voxels
            .geoms()
            .iter()
            .filter(|g| !scene.is_outer(g))
            .count(),
        16
    );
}

#[test]
fn color_loss_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 257;
    let pred: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
        .collect();
    let gt: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
        .collect();
    let recs: Vec<RenderRecord> = pred
        .iter()
        .map(|c| RenderRecord::background_only(*c))
        .collect();
    let mut want = 0.0;
    for i in 0..n {
        for k in 0..3 {
            want += (pred[i][k] - gt[i][k]).abs();
        }
    }
    want /= (3 * n) as f64;
    assert!((loss_color(&recs, &gt, 1.0).0 - want).abs() < 1e-12);
}

#[test]
fn empty_loss_matches_sort_oracle() {
    let mut scene = grid_scene(37, 1, 37);
    scene.density_mode = DensityMode::Raw;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in scene.voxels.params_mut() {
        p.w_s[3] = rng.gen_range(-5.0..2.0);
    }
    let all: Vec<usize> = (0..37).collect();
    let mut ops: Vec<f64> = all
        .iter()
        .map(|&i| segment_opacity(scene.voxels.param(i).w_s[3].exp(), 1.0))
        .collect();
    ops.sort_by(f64::total_cmp);
    let k = (37.0f64 * 0.2).ceil() as usize;
    let want = ops[..k].iter().sum::<f64>() / k as f64;
    assert!((loss_empty(&scene.voxels, &all, DensityMode::Raw, 1.0, None) - want).abs() < 1e-15);
    for p in scene.voxels.params_mut() {
        p.w_s[3] = -1e3;
    }
    assert!(loss_empty(&scene.voxels, &all, DensityMode::Raw, 1.0, None) < 1e-12);
}

#[test]
fn zero_step_training_returns_the_input() {
    let scene = grid_scene(5, 2, 50);
    let before = scene.voxels.params().to_vec();
    let cfg = TrainConfig {
        steps: 0,
        ..Default::default()
    };
    let (out, logs) = train_loop(scene, &TrainData::new(), &cfg).unwrap();
    assert!(logs.is_empty());
    assert_eq!(out.voxels.params(), &before[..]);
}
