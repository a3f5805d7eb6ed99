use kigrasp::fgt::{
    brute_force_sum, cluster_boxes, fgt_evaluate, hermite_function, m2m_expand, truncation_order, ChannelStrengths,
};
use kigrasp::verify::random_fgt_instance;
use kigrasp::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(0.0..1.0))).collect()
}

#[test]
fn hermite_product_matches_explicit_polynomials() {
    let h = [
        |t: f64| 1.0 + 0.0 * t,
        |t: f64| 2.0 * t,
        |t: f64| 4.0 * t * t - 2.0,
        |t: f64| 8.0 * t.powi(3) - 12.0 * t,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let r = Vec3::from_fn(|_, _| rng.random_range(-2.5..2.5));
        let expected = h[3](r.x) * h[2](r.y) * h[1](r.z) * (-r.norm_squared()).exp();
        assert!((hermite_function([3, 2, 1], &r) - expected).abs() < 1e-12);
    }
}

#[test]
fn truncation_order_is_monotone_and_checked() {
    let coarse = truncation_order(1e-3, 0.5).unwrap();
    let fine = truncation_order(1e-3, 1e-6).unwrap();
    assert!(coarse <= fine && fine < truncation_order(1e-3, 1e-12).unwrap());
    assert!(truncation_order(1e-3, 0.0).is_err());
    assert!(truncation_order(1e-3, 1.0).is_err());
}

#[test]
fn boxes_separate_distant_points() {
    let a = 1e-3;
    let one = cluster_boxes(&[Vec3::repeat(0.001)], &[Vec3::repeat(0.002)], a);
    assert_eq!((one.source_boxes.len(), one.target_boxes.len()), (1, 1));
    let far = [Vec3::zeros(), Vec3::new(10.0 * a.sqrt(), 0.0, 0.0)];
    assert_eq!(cluster_boxes(&far, &far, a).source_boxes.len(), 2);
}

#[test]
fn c_coefficients_are_a_fixed_multiple_of_a() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 0.1;
    let center = Vec3::new(0.3, 0.3, 0.3);
    let points: Vec<Vec3> = (0..50).map(|_| center + Vec3::from_fn(|_, _| rng.random_range(-h..h))).collect();
    let strengths: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
    let e = m2m_expand(center, h, &points, &strengths, 8);
    assert_eq!(e.c_scale, 2.0 / h);
    for (c, a) in e.c.iter().zip(&e.a) {
        assert_eq!(*c, e.c_scale * a);
    }
}

#[test]
fn unit_cube_2000_points_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sources = random_points(&mut rng, 2000);
    let targets = random_points(&mut rng, 2000);
    let values: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let total: f64 = values.iter().map(|v| v.abs()).sum();
    let s = ChannelStrengths::single(values);
    let fast = fgt_evaluate(&sources, &s, &targets, 1e-3, 1e-6).unwrap();
    let exact = brute_force_sum(&sources, &s, &targets, 1e-3).unwrap();
    assert!(fast.max_abs_diff(&exact)[0] < 1e-6 * total);
}

#[test]
fn far_pairs_vanish_and_coincident_pairs_are_one() {
    let a = 1e-3;
    let s = ChannelStrengths::single(vec![1.0]);
    let x = Vec3::new(0.2, 0.1, 0.4);
    assert_eq!(fgt_evaluate(&[x], &s, &[x], a, 1e-6).unwrap().get(0, 0, 0)[0], 1.0);
    let far = x + Vec3::new(100.0 * a.sqrt(), 0.0, 0.0);
    assert!(brute_force_sum(&[x], &s, &[far], a).unwrap().get(0, 0, 0)[0] < 1e-40);
    assert_eq!(fgt_evaluate(&[x], &s, &[far], a, 1e-6).unwrap().get(0, 0, 0)[0], 0.0);
}

#[test]
fn gradient_channels_are_source_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alpha = 1e-2;
    let sources: Vec<Vec3> = (0..20).map(|_| Vec3::from_fn(|_, _| rng.random_range(0.0..0.3))).collect();
    let targets: Vec<Vec3> = (0..20).map(|_| Vec3::from_fn(|_, _| rng.random_range(0.0..0.3))).collect();
    let s = ChannelStrengths::single((0..20).map(|_| rng.random_range(-1.0..1.0)).collect());
    let base = brute_force_sum(&sources, &s, &targets, alpha).unwrap();
    let h = 1e-7;
    for j in 0..3 {
        let shifted = |sign: f64| {
            let moved: Vec<Vec3> = sources.iter().map(|y| y + Vec3::ith(j, sign * h)).collect();
            brute_force_sum(&moved, &s, &targets, alpha).unwrap()
        };
        let (plus, minus) = (shifted(1.0), shifted(-1.0));
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for t in 0..targets.len() {
            let fd = (plus.get(t, 0, 0)[0] - minus.get(t, 0, 0)[0]) / (2.0 * h);
            err = err.max((fd - base.get(t, 0, 0)[1 + j]).abs());
            scale = scale.max(fd.abs());
        }
        assert!(err < 1e-5 * scale, "axis {j}: {err} vs {scale}");
    }
}

#[test]
fn fgt_is_translation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (sources, strengths, targets) = random_fgt_instance(&mut rng, 500, 500, false).unwrap();
    let shift = Vec3::new(3.7, -1.2, 0.45);
    let moved = |p: &[Vec3]| p.iter().map(|x| x + shift).collect::<Vec<_>>();
    let a = fgt_evaluate(&sources, &strengths, &targets, 1e-3, 1e-6).unwrap();
    let b = fgt_evaluate(&moved(&sources), &strengths, &moved(&targets), 1e-3, 1e-6).unwrap();
    let scale = (0..strengths.groups() * strengths.width())
        .map(|k| strengths.abs_sum(k / strengths.width(), k % strengths.width()))
        .fold(0.0, f64::max);
    for diff in a.max_abs_diff(&b) {
        assert!(diff < 1e-9 * scale);
    }
}
