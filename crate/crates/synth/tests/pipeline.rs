use std::f64::consts::{FRAC_PI_2, TAU};

use sixd_core::{canonicalize_symmetry, CameraIntrinsics, Quaternion, RigidTransform};
use sixd_synth::*;

fn cam(f: f64, size: usize) -> CameraIntrinsics<f64> {
    CameraIntrinsics::centered(f, size, size).unwrap()
}

fn block() -> ObjectSpec {
    toy_objects().remove(0)
}

#[test]
fn centered_box_projects_to_principal_point() {
    let k = cam(400.0, 160);
    let pose = RigidTransform::new(Quaternion::identity(), [0.0, 0.0, 1.0]);
    let c = render_toy_capture(&block(), &pose, &k, [160, 160]).unwrap();
    let m = c.mask.centroid().unwrap();
    assert!((m[0] - k.cx).abs() <= 1.0 && (m[1] - k.cy).abs() <= 1.0, "{m:?}");

    let shifted = RigidTransform::new(Quaternion::identity(), [0.1, 0.0, 1.0]);
    let s = render_toy_capture(&block(), &shifted, &k, [160, 160]).unwrap();
    let ms = s.mask.centroid().unwrap();
    assert!((ms[0] - m[0] - 40.0).abs() <= 1.0, "{ms:?} vs {m:?}");
    assert!((ms[1] - m[1]).abs() <= 1.0);

    for z in [0.0, -1.0] {
        let behind = RigidTransform::new(Quaternion::identity(), [0.0, 0.0, z]);
        assert!(matches!(
            render_toy_capture(&block(), &behind, &k, [160, 160]),
            Err(SynthError::BehindCamera(_))
        ));
    }
}

#[test]
fn renderer_depth_covers_the_mask() {
    let k = cam(200.0, 128);
    for (i, obj) in toy_objects().into_iter().chain([symmetric_object(3)]).enumerate() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(i as u64);
        let pose = RigidTransform::new(random_rotation(&mut rng), [0.0, 0.0, 0.6]);
        let c = render_toy_capture(&obj, &pose, &k, [128, 128]).unwrap();
        for (m, d) in c.mask.data.iter().zip(&c.depth.data) {
            assert_eq!(*m, *d > 0.0);
        }
        assert!(c.mask.count() > 200);
    }
}

fn off_center_capture() -> Capture {
    let k = cam(200.0, 128);
    let pose = RigidTransform::new(Quaternion::rx(0.4) * Quaternion::ry(0.3), [0.08, -0.05, 0.6]);
    render_toy_capture(&block(), &pose, &k, [128, 128]).unwrap()
}

#[test]
fn rotation_augmentation_examples() {
    let c = off_center_capture();
    let same = rotate_augment(&c, 0.0);
    assert_eq!(same.rgb, c.rgb);
    assert_eq!(same.mask, c.mask);
    assert!(same.pose.rotation.max_abs_diff(c.pose.rotation) < 1e-15);

    let full = rotate_augment(&c, TAU);
    let q = full.pose.rotation;
    let d = q.max_abs_diff(c.pose.rotation).min(q.max_abs_diff(-c.pose.rotation));
    assert!(d < 1e-9);

    let quarter = rotate_augment(&c, FRAC_PI_2);
    let m0 = c.mask.centroid().unwrap();
    let m1 = quarter.mask.centroid().unwrap();
    let ctr = 63.5;
    let expected = [ctr - (m0[1] - ctr), ctr + (m0[0] - ctr)];
    assert!((m1[0] - expected[0]).hypot(m1[1] - expected[1]) <= 1.5, "{m1:?} vs {expected:?}");
}

#[test]
fn rotated_capture_matches_rerender() {
    let k = cam(200.0, 128);
    let c = off_center_capture();
    for angle in [0.3, 1.2, 2.5, -2.0] {
        let rotated = rotate_augment(&c, angle);
        let rerendered = render_toy_capture(&block(), &rotated.pose, &k, [128, 128]).unwrap();
        let a = rotated.mask.centroid().unwrap();
        let b = rerendered.mask.centroid().unwrap();
        assert!((a[0] - b[0]).hypot(a[1] - b[1]) <= 2.0, "angle {angle}: {a:?} vs {b:?}");
        let p = k.project(rotated.pose.translation).unwrap();
        assert!((p[0] - rotated.center[0]).hypot(p[1] - rotated.center[1]) < 1e-9);
    }
}

fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        sequences: 1,
        views_per_sequence: 4,
        rotations_per_view: 5,
        seed,
        ..Default::default()
    }
}

#[test]
fn dataset_contracts() {
    let bgs = [procedural_background(128, 1), procedural_background(96, 2)];
    let objects: Vec<ObjectSpec> = toy_objects().into_iter().chain([symmetric_object(3)]).collect();
    let cfg = small_config(7);
    let ds = generate_dataset(&objects, &bgs, &cfg, 2).unwrap();
    assert_eq!(ds.samples.len(), 80);
    assert_eq!(ds.train().count(), 64);
    assert_eq!(ds.val().count(), 16);
    let syms = ds.class_symmetries();
    assert_eq!(syms.len(), 4);
    let mut occluded = 0;
    for s in &ds.samples {
        assert!(s.occlusion_fraction <= 0.5);
        occluded += (s.occlusion_fraction > 0.0) as usize;
        assert!(s.target.u.abs() <= 1.0 && s.target.v.abs() <= 1.0);
        assert!((s.target.q.norm() - 1.0).abs() < 1e-9);
        let again = canonicalize_symmetry(s.target.q, &syms[s.class_id]);
        assert!(again.max_abs_diff(s.target.q) < 1e-12);
        assert_eq!(s.input.dimensions(), (64, 64));
        // the object center lies where the target says
        let center = [s.crop_center[0] + s.target.u * 32.0, s.crop_center[1] + s.target.v * 32.0];
        let p = ds.intrinsics.project(s.pose.translation).unwrap();
        assert!((p[0] - center[0]).abs() < 1e-9 && (p[1] - center[1]).abs() < 1e-9);
    }
    assert!(occluded > 40);

    let single = generate_dataset(&objects, &bgs, &cfg, 1).unwrap();
    for (a, b) in ds.samples.iter().zip(&single.samples) {
        assert_eq!(a.input, b.input);
        assert_eq!(a.target, b.target);
        assert_eq!(a.split, b.split);
    }
}

#[test]
fn disabling_occlusion_only_removes_occluders() {
    let bgs = [procedural_background(128, 1)];
    let cfg = small_config(3);
    let with = generate_dataset(&toy_objects(), &bgs, &cfg, 1).unwrap();
    let without = generate_dataset(
        &toy_objects(),
        &bgs,
        &SynthConfig {
            max_occlusion_fraction: 0.0,
            ..cfg
        },
        1,
    )
    .unwrap();
    for (a, b) in with.samples.iter().zip(&without.samples) {
        assert_eq!(a.target, b.target);
        assert_eq!(a.crop_origin, b.crop_origin);
        assert_eq!(b.occlusion_fraction, 0.0);
        // occluders only ever paint pixels red
        for (pa, pb) in a.input.pixels().zip(b.input.pixels()) {
            assert!(pa == pb || *pa == RED);
        }
    }
}

#[test]
fn focus_pixels_are_untouched_and_background_is_red() {
    let bgs = [procedural_background(128, 9)];
    let cfg = SynthConfig {
        max_occlusion_fraction: 0.0,
        jitter_max: Some(0),
        ..small_config(1)
    };
    let ds = generate_dataset(&toy_objects(), &bgs, &cfg, 1).unwrap();
    let s = &ds.samples[0];
    let depth = s.depth_crop.as_ref().unwrap();
    for (x, y, p) in s.input.enumerate_pixels() {
        if depth.get(x as usize, y as usize) == 0.0 {
            assert_eq!(*p, RED);
        } else {
            assert_ne!(*p, RED);
        }
    }
}

#[test]
fn paper_scale_object_yields_3600_samples() {
    let cfg = SynthConfig {
        image_size: 48,
        crop_size: 32,
        focal_length: 75.0,
        store_depth: false,
        ..SynthConfig::paper_scale()
    };
    let ds = generate_dataset(&toy_objects()[..1], &[procedural_background(48, 0)], &cfg, 1).unwrap();
    assert_eq!(ds.samples.len(), 3600);
    assert_eq!(ds.train().count(), 2880);
    assert_eq!(ds.val().count(), 720);
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(4);
    let bgs = [procedural_background(128, 1)];
    let ds = generate_dataset(&toy_objects(), &bgs, &cfg, 1).unwrap();
    let m = save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.samples.len(), ds.samples.len());
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.input, b.input);
        assert_eq!(a.target, b.target);
        assert_eq!(a.pose, b.pose);
        let (da, db) = (a.depth_crop.as_ref().unwrap(), b.depth_crop.as_ref().unwrap());
        for (x, y) in da.data.iter().zip(&db.data) {
            assert!((x - y).abs() <= 0.0005 + 1e-6);
        }
    }
    assert_eq!(read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), m);

    let dir2 = tempfile::tempdir().unwrap();
    save_dataset(&generate_dataset(&toy_objects(), &bgs, &cfg, 1).unwrap(), dir2.path()).unwrap();
    let a = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
    let b = std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("\"kind\": \"none\""));
}
