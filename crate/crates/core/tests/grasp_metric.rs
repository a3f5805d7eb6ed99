use kigrasp::grasp::{
    compute_gd_strength, evaluate_objective, lemma1_limit_integral, sample_wrench_directions, FrictionCone,
    KernelBackend, Wrench,
};
use kigrasp::planner::{Prepared, RunConfig};
use kigrasp::sampling::{PointSample, SurfaceSamples};
use kigrasp::verify::{self, Fixture};
use kigrasp::Vec3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_problem() -> Prepared {
    let config = RunConfig { poisson_r: Some(0.04), directions: 16, ..RunConfig::default() };
    verify::sphere_problem(Fixture::ParallelJaw, &config).unwrap()
}

/// The initial pose pushed onto the sphere so the kernel sums are not tiny.
fn touching(p: &Prepared) -> kigrasp::kinematics::Configuration {
    let mut cfg = kigrasp::planner::initial_configuration(&p.problem, &Vec3::z()).unwrap();
    cfg.theta[2] -= 0.8 * p.d0;
    cfg
}

fn sample(position: Vec3, normal: Vec3) -> PointSample {
    PointSample { position, normal, area_weight: 1.0 }
}

fn random_case(rng: &mut impl Rng) -> (PointSample, Wrench, FrictionCone) {
    let n = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
    let x = sample(Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)), n);
    let w = Wrench::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
    (x, w, FrictionCone { mu: rng.random_range(0.0..1.5) })
}

#[test]
fn pure_pull_and_unattainable_directions() {
    let n = Vec3::new(0.0, 0.6, 0.8);
    let x = sample(Vec3::zeros(), n);
    let pull = Wrench::new(n.x, n.y, n.z, 0.0, 0.0, 0.0);
    let (s, f) = compute_gd_strength(&x, &pull, &FrictionCone { mu: 0.5 });
    assert!((s - 1.0).abs() < 1e-12 && (f - n).norm() < 1e-12);
    let (s, f) = compute_gd_strength(&x, &(-pull), &FrictionCone { mu: 0.0 });
    assert_eq!((s, f.norm()), (0.0, 0.0));
}

proptest! {
    #[test]
    fn strength_is_homogeneous_and_force_stays_in_the_cone(seed in 0u64..100_000, lambda in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, w, cone) = random_case(&mut rng);
        let (s, f) = compute_gd_strength(&x, &w, &cone);
        let (s2, f2) = compute_gd_strength(&x, &(w * lambda), &cone);
        prop_assert!(s >= 0.0);
        prop_assert!((s2 - lambda * s).abs() <= 1e-12 * (1.0 + s2.abs()));
        if s > 1e-12 {
            prop_assert!((f - f2).norm() < 1e-9);
        }
        let normal = x.normal.dot(&f);
        prop_assert!(normal.abs() < 1e-12 || (normal - 1.0).abs() < 1e-12);
        prop_assert!((f - x.normal * normal).norm() <= cone.mu * normal + 1e-12);
    }
}

#[test]
fn wrench_directions_are_reproducible_and_spread() {
    assert!(sample_wrench_directions(0, 1).is_err());
    let one = sample_wrench_directions(1, 3).unwrap();
    assert!((one.directions[0].norm() - 1.0).abs() < 1e-12);
    let a = sample_wrench_directions(128, 11).unwrap();
    assert_eq!(a, sample_wrench_directions(128, 11).unwrap());
    let mean = a.directions.iter().sum::<Wrench>() / 128.0;
    assert!(mean.norm() < 0.2);
}

#[test]
fn doubling_area_weights_quadruples_every_g() {
    let p = small_problem();
    let cfg = touching(&p);
    let doubled = |s: &SurfaceSamples| SurfaceSamples {
        samples: s.samples.iter().map(|x| PointSample { area_weight: 2.0 * x.area_weight, ..*x }).collect(),
        link_id: s.link_id.clone(),
    };
    let cone = FrictionCone { mu: 0.7 };
    let model = &p.problem.model;
    let base = evaluate_objective(&p.object, &p.gripper, model, &cfg, &p.directions, &cone, 1e-3, 1e-6).unwrap();
    let big = evaluate_objective(&doubled(&p.object), &doubled(&p.gripper), model, &cfg, &p.directions, &cone, 1e-3, 1e-6)
        .unwrap();
    assert!(base.q_inf > 0.0);
    for (a, b) in base.g.iter().zip(&big.g) {
        assert!((b - 4.0 * a).abs() <= 1e-12 * b.abs());
    }
}

#[test]
fn distant_gripper_sees_nothing() {
    let p = small_problem();
    let mut cfg = touching(&p);
    cfg.theta[0] += 10.0;
    let g = p.problem.metric.values(&p.problem.model, &cfg).unwrap();
    assert!(g.iter().all(|v| *v < 1e-30));
}

#[test]
fn min_is_exact_and_backends_agree() {
    let p = small_problem();
    let cfg = touching(&p);
    let fast = p.problem.metric.evaluate(&p.problem.model, &cfg).unwrap();
    assert!(fast.g.iter().all(|g| fast.q_inf <= *g));
    assert_eq!(fast.q_inf, fast.g[fast.argmin]);
    let brute = p.problem.metric.with_backend(KernelBackend::BruteForce).evaluate(&p.problem.model, &cfg).unwrap();
    for (a, b) in fast.g.iter().zip(&brute.g) {
        assert!((a - b).abs() <= 1e-6 * b.abs());
    }
}

#[test]
fn g_ignores_sample_order() {
    let p = small_problem();
    let cfg = touching(&p);
    let cone = FrictionCone { mu: 0.7 };
    let model = &p.problem.model;
    let reversed = |s: &SurfaceSamples| SurfaceSamples {
        samples: s.samples.iter().rev().copied().collect(),
        link_id: s.link_id.as_ref().map(|ids| ids.iter().rev().copied().collect()),
    };
    let a = evaluate_objective(&p.object, &p.gripper, model, &cfg, &p.directions, &cone, 1e-3, 1e-6).unwrap();
    let b = evaluate_objective(&reversed(&p.object), &reversed(&p.gripper), model, &cfg, &p.directions, &cone, 1e-3, 1e-6)
        .unwrap();
    for (x, y) in a.g.iter().zip(&b.g) {
        assert!((x - y).abs() <= 1e-10 * x.abs());
    }
}

#[test]
fn lemma1_integral_tends_to_one_for_any_radius() {
    assert!(lemma1_limit_integral(1.0, 0.1).is_err());
    let at = |a: f64, dr: f64| lemma1_limit_integral(a, dr).unwrap();
    // convergence is only like 1/|ln α|: the value at 1e-8 is 0.875
    assert!((at(1e-8, 0.1) - 1.0).abs() < 0.15);
    assert!((at(1e-30, 0.1) - 1.0).abs() < (at(1e-8, 0.1) - 1.0).abs());
    let spread = |a: f64| {
        let v = [0.05, 0.1, 0.5].map(|dr| at(a, dr));
        v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x)) - v.iter().fold(f64::INFINITY, |m, x| m.min(*x))
    };
    assert!(spread(1e-30) < spread(1e-8));
    assert!(spread(1e-30) < 0.05);
}
