//! FGT against direct summation on the jaw-and-sphere kernel pass. Run once
//! with default features and once with `--no-default-features` to compare the
//! rayon core against the sequential fallback; the group name records which.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kigrasp::fgt;
use kigrasp::planner::{self, RunConfig};
use kigrasp::verify::{self, Fixture};
use kigrasp::Vec3;

const MODE: &str = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };

fn kernel_sums(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("kernel_sum/{MODE}"));
    group.sample_size(10);
    for density in [1.0, 4.0] {
        let config = RunConfig { poisson_r: Some(0.02 / f64::sqrt(density)), ..RunConfig::default() };
        let prepared = verify::sphere_problem(Fixture::ParallelJaw, &config).unwrap();
        let problem = &prepared.problem;
        let cfg = planner::initial_configuration(problem, &Vec3::from(config.approach)).unwrap();
        let poses = problem.model.forward_kinematics(&cfg).unwrap();
        let (sources, strengths) = problem.metric.kernel_inputs(&poses, true).unwrap();
        let targets = problem.metric.object_points();
        let alpha = config.alpha;
        group.bench_with_input(BenchmarkId::new("fgt", density), &density, |b, _| {
            b.iter(|| fgt::fgt_evaluate(black_box(&sources), &strengths, targets, alpha, config.epsilon_fgt).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("brute", density), &density, |b, _| {
            b.iter(|| fgt::brute_force_sum(black_box(&sources), &strengths, targets, alpha).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernel_sums);
criterion_main!(benches);
