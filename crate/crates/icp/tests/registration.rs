use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sixd_core::linalg::identity3;
use sixd_core::{angular_distance, Quaternion, RigidTransform, Vec3};
use sixd_icp::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_points(n: usize, r: &mut ChaCha8Rng) -> Vec<Vec3<f64>> {
    (0..n).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect()
}

fn scan(points: &[Vec3<f64>], q: Vec3<f64>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
            (i, dx * dx + dy * dy + dz * dz)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.into_iter().map(|(i, d)| (i, d.sqrt())).collect()
}

#[test]
fn kdtree_matches_linear_scan() {
    let mut r = rng(1);
    let pts = random_points(1000, &mut r);
    let tree = KdTree::build(&pts).unwrap();
    for _ in 0..100 {
        let q = [r.gen_range(-1.2..1.2), r.gen_range(-1.2..1.2), r.gen_range(-1.2..1.2)];
        let oracle = scan(&pts, q);
        assert_eq!(tree.nearest(q), oracle[0]);
        assert_eq!(tree.k_nearest(q, 7), oracle[..7].to_vec());
    }
    // lattice points make many exact ties
    let grid: Vec<Vec3<f64>> = (0..343).map(|i| [(i % 7) as f64, ((i / 7) % 7) as f64, (i / 49) as f64]).collect();
    let tree = KdTree::build(&grid).unwrap();
    for _ in 0..100 {
        let q = [r.gen_range(0..13) as f64 * 0.5, r.gen_range(0..13) as f64 * 0.5, r.gen_range(0..13) as f64 * 0.5];
        let oracle = scan(&grid, q);
        assert_eq!(tree.nearest(q), oracle[0]);
        assert_eq!(tree.k_nearest(q, 5), oracle[..5].to_vec());
    }
}

fn block_cloud() -> Vec<Vec3<f64>> {
    let poly = sixd_synth::toy_objects()[0].polyhedron().unwrap();
    poly.surface_points(12)
}

fn known_offset() -> RigidTransform<f64> {
    let axis = [0.3, -0.5, 0.8];
    let n: f64 = axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2];
    let axis = axis.map(|a| a / n.sqrt());
    let t = [0.012, -0.01, 0.0124];
    let tn: f64 = t[0] * t[0] + t[1] * t[1] + t[2] * t[2];
    RigidTransform::new(
        Quaternion::from_axis_angle(axis, 5f64.to_radians()),
        t.map(|v| v * 0.02 / tn.sqrt()),
    )
}

fn with_covariances(points: Vec<Vec3<f64>>) -> PointCloud {
    estimate_covariances(&PointCloud::new(points), 10, 1e-3).unwrap()
}

fn pose_error(a: &RigidTransform<f64>, b: &RigidTransform<f64>) -> (f64, f64) {
    let d = [
        a.translation[0] - b.translation[0],
        a.translation[1] - b.translation[1],
        a.translation[2] - b.translation[2],
    ];
    (angular_distance(a.rotation, b.rotation), (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
}

#[test]
fn recovers_known_perturbation_under_noise() {
    let pts = block_cloud();
    assert!(pts.len() >= 500, "{} points", pts.len());
    let truth = known_offset();
    let noise = Normal::new(0.0, 0.001).unwrap();
    let mut r = rng(5);
    let scene_pts: Vec<Vec3<f64>> = pts
        .iter()
        .map(|p| truth.transform_point(*p).map(|c| c + noise.sample(&mut r)))
        .collect();
    let start = Instant::now();
    let model = with_covariances(pts);
    let scene = with_covariances(scene_pts);
    let cfg = GicpConfig {
        max_correspondence_distance: Some(0.05),
        ..GicpConfig::default()
    };
    let res = gicp_refine(&model, &scene, &RigidTransform::identity(), &cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let (deg, m) = pose_error(&res.transform, &truth);
    println!("rotation {deg:.4} deg, translation {m:.5} m, {} iterations, {elapsed:.3} s", res.iterations);
    assert!(deg <= 0.5 && m <= 0.002);
    assert!(res.iterations <= 50);
    assert!(elapsed < 5.0);
    assert!((res.transform.rotation.norm() - 1.0).abs() < 1e-9);
}

#[test]
fn recovers_with_default_correspondence_distance() {
    let pts = block_cloud();
    let truth = known_offset();
    let scene_pts: Vec<Vec3<f64>> = pts.iter().map(|p| truth.transform_point(*p)).collect();
    let res = gicp_refine(
        &with_covariances(pts),
        &with_covariances(scene_pts),
        &RigidTransform::identity(),
        &GicpConfig::default(),
    )
    .unwrap();
    let (deg, m) = pose_error(&res.transform, &truth);
    println!("default distance: rotation {deg:.4} deg, translation {m:.5} m, {} iterations", res.iterations);
    assert!(deg <= 0.5 && m <= 0.002);
}

#[test]
fn aligned_clouds_are_a_fixed_point() {
    let pts = block_cloud();
    let initial = RigidTransform::new(Quaternion::ry(0.4) * Quaternion::rx(-0.2), [0.05, -0.02, 0.7]);
    let model = with_covariances(pts.clone());
    let scene = model.transformed(&initial);
    let res = gicp_refine(&model, &scene, &initial, &GicpConfig::default()).unwrap();
    let (deg, m) = pose_error(&res.transform, &initial);
    assert!(deg < 1e-6, "{deg}");
    assert!(m <= 1e-9, "{m}");
}

#[test]
fn disjoint_clouds_have_no_overlap() {
    let pts = block_cloud();
    let far: Vec<Vec3<f64>> = pts.iter().map(|p| [p[0] + 5.0, p[1], p[2]]).collect();
    let err = gicp_refine(
        &with_covariances(pts),
        &with_covariances(far),
        &RigidTransform::identity(),
        &GicpConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, IcpError::NoOverlap(_)));
    assert!(err.to_string().contains("no overlap"));
}

/// Closed-form least-squares rigid alignment via SVD.
fn kabsch(src: &[Vec3<f64>], dst: &[Vec3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let a: Vec<Vector3<f64>> = src.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
    let b: Vec<Vector3<f64>> = dst.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (x, y) in a.iter().zip(&b) {
        h += (x - ca) * (y - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    (r, cb - r * ca)
}

#[test]
fn point_to_point_mode_matches_closed_form() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let src: Vec<Vec3<f64>> = random_points(200, &mut r).into_iter().map(|p| p.map(|c| c * 0.1)).collect();
        let truth = RigidTransform::new(
            Quaternion::from_axis_angle([0.0, 0.6, 0.8], r.gen_range(-0.5..0.5)),
            [r.gen_range(-0.05..0.05), r.gen_range(-0.05..0.05), r.gen_range(-0.05..0.05)],
        );
        // noiseless fixture first, then one with residual noise
        for sigma in [0.0f64, 0.004] {
            let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
            let dst: Vec<Vec3<f64>> = src
                .iter()
                .map(|p| truth.transform_point(*p).map(|c| c + if sigma > 0.0 { noise.sample(&mut r) } else { 0.0 }))
                .collect();
            let pairs: Vec<Pair> = src
                .iter()
                .zip(&dst)
                .map(|(m, s)| Pair {
                    model: *m,
                    scene: *s,
                    information: identity3::<f64>().map(|row| row.map(|v| v * 0.5)),
                })
                .collect();
            let res = align_pairs(&pairs, &RigidTransform::identity(), &GicpConfig::default()).unwrap();
            let (rk, tk) = kabsch(&src, &dst);
            let rg = res.transform.rotation.to_rotation_matrix();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((rg[i][j] - rk[(i, j)]).abs() < 1e-6, "seed {seed} sigma {sigma}");
                }
                assert!((res.transform.translation[i] - tk[i]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn cost_never_increases_and_rotation_stays_unit() {
    let pts = block_cloud();
    let truth = known_offset();
    let model = with_covariances(pts.clone());
    let scene = with_covariances(pts.iter().map(|p| truth.transform_point(*p)).collect());
    let tree = KdTree::build(&scene.points).unwrap();
    let mut t = RigidTransform::identity();
    for it in 0..20 {
        let r = t.rotation.to_rotation_matrix();
        let pairs: Vec<Pair> = model
            .points
            .iter()
            .zip(model.covariances.as_ref().unwrap())
            .filter_map(|(p, c)| {
                let (j, d) = tree.nearest(t.transform_point(*p));
                (d <= 0.05).then(|| {
                    let comb = sixd_core::linalg::mat3_add(
                        &scene.covariances.as_ref().unwrap()[j],
                        &sixd_core::linalg::mat3_sandwich(&r, c),
                    );
                    Pair {
                        model: *p,
                        scene: scene.points[j],
                        information: sixd_core::linalg::mat3_inverse(&comb).unwrap(),
                    }
                })
            })
            .collect();
        let before = pair_cost(&t, &pairs);
        let step = damped_step(&t, &pairs, it).unwrap();
        assert!(step.cost <= before);
        assert!((step.transform.rotation.norm() - 1.0).abs() < 1e-9);
        t = step.transform;
    }
}

#[test]
fn ply_file_round_trip() {
    let cloud = with_covariances(block_cloud());
    let dir = std::env::temp_dir().join(format!("sixd-icp-ply-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("cloud.ply");
    write_ply(&cloud, std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_ply(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, cloud);
    std::fs::remove_dir_all(&dir).unwrap();
}
