use kigrasp::fixtures;
use kigrasp::hull::{box_hull, cube, point_to_convex_distance, ConvexHull};
use kigrasp::kinematics::{Configuration, KinematicModel, Pose};
use kigrasp::oracles::{exhaustive_convex_distance, fd_jacobian, FdSpec};
use kigrasp::sampling::poisson_disk_mesh;
use kigrasp::{so3, Vec3};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cfg(model: &KinematicModel, rng: &mut impl Rng) -> Configuration {
    let mut theta: Vec<f64> = (0..model.dof_count()).map(|_| rng.random_range(-2.0..2.0)).collect();
    for l in 1..model.link_count() {
        if let Some([lo, hi]) = model.joint_limits(l) {
            theta[model.dof_of_link(l)] = rng.random_range(lo..hi);
        }
    }
    Configuration::from_slice(&theta)
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize()
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    let w = random_unit(rng) * rng.random_range(0.0..3.0);
    Pose::new(so3::exp(&w), Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0)))
}

#[test]
fn forward_kinematics_gives_proper_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for model in [fixtures::parallel_jaw(), fixtures::claw()] {
        for _ in 0..500 {
            let cfg = random_cfg(&model, &mut rng);
            for pose in model.forward_kinematics(&cfg).unwrap() {
                let defect = (pose.r.transpose() * pose.r - nalgebra::Matrix3::identity()).amax();
                assert!(defect < 1e-10, "orthogonality defect {defect}");
                assert!(pose.r.determinant() > 0.0);
            }
        }
    }
}

#[test]
fn kinematic_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let models = [fixtures::parallel_jaw(), fixtures::claw()];
    for i in 0..100 {
        let model = &models[i % 2];
        let cfg = random_cfg(model, &mut rng);
        let link = rng.random_range(0..model.link_count());
        let analytic = model.kinematic_jacobian(&cfg, link).unwrap();
        let entries = |t: &DVector<f64>| {
            let poses = model.forward_kinematics(&Configuration::new(t.clone())).unwrap();
            DVector::from_column_slice(&poses[link].entries())
        };
        let fd = fd_jacobian(entries, &cfg.theta, FdSpec::default()).unwrap();
        let err = (&analytic - &fd).amax() / fd.amax().max(1.0);
        assert!(err < 1e-6, "link {link}: relative error {err}");
    }
}

#[test]
fn cube_distance_and_witness() {
    let c = cube(Vec3::zeros(), 0.5);
    let d = point_to_convex_distance(&Vec3::new(2.0, 0.0, 0.0), &c, &Pose::identity());
    assert!((d.distance - 1.5).abs() < 1e-12);
    assert!((d.witness - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    assert_eq!(point_to_convex_distance(&c.centroid(), &c, &Pose::identity()).distance, 0.0);
}

#[test]
fn tetrahedron_distance_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 200 {
        let verts: Vec<Vec3> = (0..4).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let Ok(hull) = ConvexHull::new(verts.clone()) else { continue };
        let x = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let d = point_to_convex_distance(&x, &hull, &Pose::identity()).distance;
        let oracle = exhaustive_convex_distance(&x, &verts);
        assert!((d - oracle).abs() < 1e-10, "{d} vs {oracle}");
        checked += 1;
    }
}

#[test]
fn poisson_samples_keep_their_spacing() {
    let hull = box_hull(Vec3::zeros(), Vec3::new(0.3, 0.2, 0.1));
    let r = 0.03;
    let samples = poisson_disk_mesh(hull.vertices(), hull.triangles(), r, 9).unwrap();
    assert!(samples.len() > 50);
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            assert!((a.position - b.position).norm() >= r);
        }
    }
}

proptest! {
    #[test]
    fn distance_is_invariant_under_rigid_motion(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hull = box_hull(Vec3::zeros(), Vec3::new(0.4, 0.2, 0.3));
        let link_pose = random_pose(&mut rng);
        let x = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let motion = random_pose(&mut rng);
        let before = point_to_convex_distance(&x, &hull, &link_pose).distance;
        let after = point_to_convex_distance(&motion.apply(&x), &hull, &motion.compose(&link_pose)).distance;
        prop_assert!((before - after).abs() < 1e-10);
    }
}
