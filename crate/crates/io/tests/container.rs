use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salf_core::math::{Aabb, Quat, RigidPose, Vec3};
use salf_core::scene::{Actor, DensityMode, Keyframe, Scene, SceneBounds, SparseVoxelSet, VoxelParams};
use salf_core::sensors::CameraModel;
use salf_io::container::{decode_voxels, encode_voxels, RECORD_SIZE};
use salf_io::{load_scene, save_scene, IoError, NamedCamera, SensorRig};

/// Random voxels spread over three levels of an 8 m grid.
fn random_set(rng: &mut ChaCha8Rng, b: &SceneBounds, n: usize) -> SparseVoxelSet {
    let mut set = SparseVoxelSet::new(n);
    let mut tries = 0;
    while set.len() < n && tries < 100 * n {
        tries += 1;
        let level = rng.gen_range(0..b.max_levels);
        let cells = 8 << level;
        let ijk = [rng.gen_range(0..cells), rng.gen_range(0..cells), rng.gen_range(0..cells)];
        let (a, bb) = (rng.gen_range(0.5..20.0), rng.gen_range(0.05..0.5));
        let p = VoxelParams::random(rng, a, bb);
        let _ = set.insert(b, level, ijk, p);
    }
    set
}

fn random_scene(seed: u64, n: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = SceneBounds::new(Vec3::new(-4.0, -4.0, -1.0), Vec3::new(4.0, 4.0, 7.0), 1.0, 3).unwrap();
    let mut scene = Scene::new(b, n);
    scene.voxels = random_set(&mut rng, &b, n);
    scene.density_mode = DensityMode::Raw;
    scene.inner_region = Some(Aabb::new(Vec3::new(-2.0, -2.0, 0.0), Vec3::new(2.0, 2.0, 2.0)));
    let traj = vec![
        Keyframe {
            t: 0.0,
            pose: RigidPose::from_translation(Vec3::new(1.0, 0.0, 0.5)),
        },
        Keyframe {
            t: 1.0,
            pose: RigidPose::new(Quat::from_euler_angles(0.0, 0.0, 0.3), Vec3::new(2.0, 0.5, 0.5)),
        },
    ];
    let mut actor = Actor::new(7, Vec3::new(2.0, 1.0, 1.0), 0.5, 2, traj, 64).unwrap();
    actor.voxels = random_set(&mut rng, &actor.bounds, 20);
    scene.actors.push(actor);
    scene
}

fn rig() -> SensorRig {
    SensorRig {
        cameras: vec![NamedCamera {
            name: "front".into(),
            time: 0.25,
            camera: CameraModel::pinhole_fov(64, 48, 1.2, RigidPose::from_translation(Vec3::new(0.0, -3.0, 1.0))),
        }],
        lidars: Vec::new(),
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn thousand_voxel_scene_round_trips_byte_identically() {
    let scene = random_scene(3, 1000);
    assert_eq!(scene.voxels.len(), 1000);
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    save_scene(&a, &scene, &rig()).unwrap();
    let (loaded, sensors) = load_scene(&a).unwrap();
    save_scene(&b, &loaded, &sensors).unwrap();
    assert_eq!(files(&a), files(&b));
    assert_eq!(fs::metadata(a.join("voxels.bin")).unwrap().len(), 1000 * RECORD_SIZE as u64);

    assert_eq!(sensors, rig());
    assert_eq!(loaded.voxels.keys(), scene.voxels.keys());
    assert_eq!(loaded.density_mode, DensityMode::Raw);
    assert_eq!(loaded.inner_region, scene.inner_region);
    // Parameters are stored in single precision.
    for (p, q) in loaded.voxels.params().iter().zip(scene.voxels.params()) {
        for (x, y) in p.to_flat().iter().zip(q.to_flat()) {
            assert_eq!(*x, f64::from(y as f32));
        }
    }
    let (la, sa) = (&loaded.actors[0], &scene.actors[0]);
    assert_eq!((la.id, la.extents, &la.trajectory), (sa.id, sa.extents, &sa.trajectory));
    assert_eq!(la.voxels.keys(), sa.voxels.keys());
}

#[test]
fn empty_scene_round_trips() {
    let b = SceneBounds::new(Vec3::zeros(), Vec3::repeat(2.0), 1.0, 1).unwrap();
    let scene = Scene::new(b, 0);
    let tmp = tempfile::tempdir().unwrap();
    save_scene(tmp.path(), &scene, &SensorRig::default()).unwrap();
    assert_eq!(fs::read(tmp.path().join("voxels.bin")).unwrap().len(), 0);
    let (loaded, sensors) = load_scene(tmp.path()).unwrap();
    assert!(loaded.voxels.is_empty() && loaded.actors.is_empty());
    assert_eq!(sensors, SensorRig::default());
    assert_eq!(loaded.bounds, b);
}

#[test]
fn truncated_voxels_is_a_size_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    save_scene(tmp.path(), &random_scene(1, 50), &SensorRig::default()).unwrap();
    let p = tmp.path().join("voxels.bin");
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
    match load_scene(tmp.path()) {
        Err(IoError::SizeMismatch { expected, actual, .. }) => {
            assert_eq!(expected, (50 * RECORD_SIZE) as u64);
            assert_eq!(actual, expected - 7);
        }
        other => panic!("expected a size mismatch, got {other:?}"),
    }
}

#[test]
fn unknown_version_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    save_scene(tmp.path(), &random_scene(1, 5), &SensorRig::default()).unwrap();
    let p = tmp.path().join("meta.json");
    let meta = fs::read_to_string(&p).unwrap().replace("salf.v1", "salf.v9");
    fs::write(&p, meta).unwrap();
    let err = load_scene(tmp.path()).unwrap_err();
    assert!(matches!(&err, IoError::UnknownVersion { found, .. } if found == "salf.v9"), "{err}");
}

#[test]
fn nan_parameter_names_the_field() {
    let mut scene = random_scene(2, 10);
    scene.voxels.params_mut()[4].w_c[1][2] = f64::NAN;
    let tmp = tempfile::tempdir().unwrap();
    let err = save_scene(tmp.path(), &scene, &SensorRig::default()).unwrap_err();
    match &err {
        IoError::NonFinite { record, field, .. } => {
            assert_eq!(*record, 4);
            assert_eq!(field, "w_c[1][2]");
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }

    // A NaN written by another tool is caught on load.
    let scene = random_scene(2, 10);
    save_scene(tmp.path(), &scene, &SensorRig::default()).unwrap();
    let p = tmp.path().join("voxels.bin");
    let mut bytes = fs::read(&p).unwrap();
    let off = 3 * RECORD_SIZE + 13 + 25 * 4;
    bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&p, bytes).unwrap();
    match load_scene(tmp.path()).unwrap_err() {
        IoError::NonFinite { record, field, .. } => assert_eq!((record, field.as_str()), (3, "log_a")),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn missing_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    save_scene(tmp.path(), &random_scene(4, 5), &SensorRig::default()).unwrap();
    fs::remove_file(tmp.path().join("actor_7.bin")).unwrap();
    let msg = load_scene(tmp.path()).unwrap_err().to_string();
    assert!(msg.contains("actor_7.bin"), "{msg}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn records_survive_encode_decode(seed in any::<u64>(), n in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = SceneBounds::new(Vec3::zeros(), Vec3::repeat(8.0), 1.0, 3).unwrap();
        let set = random_set(&mut rng, &b, n);
        let path = Path::new("voxels.bin");
        let bytes = encode_voxels(&set, path).unwrap();
        prop_assert_eq!(bytes.len(), set.len() * RECORD_SIZE);
        let back = decode_voxels(&bytes, set.len(), &b, n, path).unwrap();
        prop_assert_eq!(encode_voxels(&back, path).unwrap(), bytes);
        prop_assert_eq!(back.keys(), set.keys());
    }
}
