//! Oracle suite behind `kigrasp verify`.
//!
//! The `measure_*` functions return raw error figures so callers can apply their
//! own tolerances and sample counts; [`run`] applies the default ones.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barriers::{self, HessianKind};
use crate::fgt::{self, ChannelStrengths, FgtOptions};
use crate::grasp::{compute_gd_strength, lemma1_limit_integral, FrictionCone, KernelBackend, Wrench};
use crate::io::OrientedCloud;
use crate::kinematics::{Configuration, KinematicModel};
use crate::oracles::{self, FdSpec};
use crate::planner::{self, Prepared, RunConfig};
use crate::sampling::PointSample;
use crate::sqp::{self, QpInstance, SolverParams, TraceRecord};
use crate::{fixtures, Result, Vec3};

/// Which bundled gripper to pair with the sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fixture {
    ParallelJaw,
    Claw,
}

impl Fixture {
    pub fn model(self) -> KinematicModel {
        match self {
            Fixture::ParallelJaw => fixtures::parallel_jaw(),
            Fixture::Claw => fixtures::claw(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Fixture::ParallelJaw => "parallel_jaw",
            Fixture::Claw => "claw",
        }
    }
}

/// Fibonacci sphere with inward normals and a unit bounding-box diagonal.
pub fn sphere_object(n: usize) -> OrientedCloud {
    let c = fixtures::sphere_cloud(n);
    OrientedCloud { points: c.points, normals: c.normals.iter().map(|v| -v).collect() }
}

/// A fixture gripper against the sphere, ready to solve.
pub fn sphere_problem(fixture: Fixture, config: &RunConfig) -> Result<Prepared> {
    let mut cloud = sphere_object(20_000);
    crate::io::normalize(&mut cloud);
    let mut config = config.clone();
    config.object = "sphere".into();
    config.gripper = fixture.name().into();
    planner::prepare_with(&config, fixture.model(), &cloud)
}

/// `max_k err_k / Σ|S_k|` over every (group, channel) of one FGT evaluation.
pub fn fgt_error_ratio(
    sources: &[Vec3],
    strengths: &ChannelStrengths,
    targets: &[Vec3],
    alpha: f64,
    epsilon: f64,
    options: &FgtOptions,
) -> Result<f64> {
    let (fast, _) = fgt::fgt_evaluate_with(sources, strengths, targets, alpha, epsilon, options)?;
    let exact = oracles::brute_force_sum(sources, strengths, targets, alpha)?;
    let width = strengths.width();
    let mut worst = 0.0f64;
    for (k, err) in fast.max_abs_diff(&exact).into_iter().enumerate() {
        let s = strengths.abs_sum(k / width, k % width);
        let ratio = if s > 0.0 { err / s } else if err > 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Random sources and targets with four channels in three groups. Odd
/// instances sit on two nearby sphere shells, even ones fill a unit cube.
pub fn random_fgt_instance(rng: &mut impl Rng, n: usize, m: usize, shell: bool) -> Result<(Vec<Vec3>, ChannelStrengths, Vec<Vec3>)> {
    let mut point = |radius: f64| -> Vec3 {
        if shell {
            let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let v = if v.norm() > 1e-9 { v.normalize() } else { Vec3::x() };
            v * radius
        } else {
            Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5))
        }
    };
    let sources: Vec<Vec3> = (0..m).map(|_| point(0.3)).collect();
    let targets: Vec<Vec3> = (0..n).map(|_| point(0.29)).collect();
    let groups = 3;
    let group_of: Vec<usize> = (0..m).map(|i| i % groups).collect();
    let values: Vec<f64> = (0..4 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok((sources, ChannelStrengths::new(4, groups, group_of, values)?, targets))
}

/// Largest relative gap between the closed form and the sampled cone over
/// `count` random `(x, w, μ)`.
pub fn measure_gd_strength(rng: &mut impl Rng, count: usize, k_dirs: usize) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..count {
        let normal = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let x = PointSample {
            position: Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            normal,
            area_weight: 1.0,
        };
        let w = Wrench::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let cone = FrictionCone { mu: rng.random_range(0.0..1.5) };
        let (closed, _) = compute_gd_strength(&x, &w, &cone);
        let sampled = oracles::sampled_cone_max(&x, &w, &cone, k_dirs);
        let scale = closed.abs().max(sampled.abs());
        if scale > 1e-12 {
            worst = worst.max((closed - sampled).abs() / scale);
        }
    }
    worst
}

/// Random strictly feasible configurations around the initial pose: the
/// palm is pushed toward the object and tilted, joints are drawn within
/// their limits. States where the gripper does not reach the object's
/// barrier band are skipped.
pub fn random_feasible_states(prepared: &Prepared, rng: &mut impl Rng, count: usize) -> Result<Vec<Configuration>> {
    let problem = &prepared.problem;
    let model = &problem.model;
    let init = planner::initial_configuration(problem, &Vec3::from(prepared.config.approach))?;
    let approach = Vec3::from(prepared.config.approach).normalize();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 200 * count {
            return Err(crate::Error::InfeasibleInit(format!(
                "found only {} of {count} random feasible states",
                out.len()
            )));
        }
        let mut theta = init.theta.clone();
        let push = rng.random_range(0.0..1.5) * prepared.d0;
        for k in 0..3 {
            theta[k] += -approach[k] * push + rng.random_range(-0.03..0.03);
            theta[3 + k] += rng.random_range(-0.1..0.1);
        }
        for l in 1..model.link_count() {
            if let Some([lo, hi]) = model.joint_limits(l) {
                theta[model.dof_of_link(l)] = rng.random_range(lo..hi);
            }
        }
        let cfg = Configuration::new(theta);
        let l_o = problem.object_barrier.value(model, &cfg)?;
        if !(l_o.is_finite() && l_o > 0.0) {
            continue;
        }
        let Ok(planes) = barriers::init_separating_planes(model, &cfg) else { continue };
        if !barriers::self_collision_value(model, &cfg, &planes, problem.self_barrier)?.is_finite() {
            continue;
        }
        out.push(cfg);
    }
    Ok(out)
}

/// `‖a − f‖∞ / ‖f‖∞`, or the absolute gap when `f` vanishes.
fn rel_err(analytic: &DVector<f64>, fd: &DVector<f64>) -> f64 {
    let scale = fd.amax();
    let diff = (analytic - fd).amax();
    if scale > 0.0 { diff / scale } else { diff }
}

/// Worst relative finite-difference errors at the given states, one figure
/// per quantity.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradientErrors {
    /// Worst over every direction `d` of the row `∂G^d/∂θ`.
    pub metric: f64,
    pub object_barrier: f64,
    pub self_barrier: f64,
}

pub fn measure_gradients(prepared: &Prepared, states: &[Configuration]) -> Result<GradientErrors> {
    let problem = &prepared.problem;
    let model = &problem.model;
    let metric = problem.metric.with_backend(KernelBackend::BruteForce);
    let spec = FdSpec::default();
    let mut errs = GradientErrors::default();
    for cfg in states {
        let at = &cfg.theta;
        let analytic = metric.evaluate(model, cfg)?;
        let fd = oracles::fd_jacobian(
            |t| {
                let g = metric.values(model, &Configuration::new(t.clone())).unwrap_or_default();
                DVector::from_vec(g)
            },
            at,
            spec,
        )?;
        for d in 0..analytic.g.len() {
            let a = analytic.dg.row(d).transpose();
            let f = fd.row(d).transpose();
            errs.metric = errs.metric.max(rel_err(&a, &f));
        }

        let lo = problem.object_barrier.evaluate(model, cfg)?;
        let fd = oracles::fd_gradient(
            |t| problem.object_barrier.value(model, &Configuration::new(t.clone())).unwrap_or(f64::NAN),
            at,
            spec,
        )?;
        errs.object_barrier = errs.object_barrier.max(rel_err(&lo.gradient, &fd));

        let planes = barriers::init_separating_planes(model, cfg)?;
        let lr = barriers::self_collision_barrier(model, cfg, &planes, problem.self_barrier)?;
        let fd = oracles::fd_gradient(
            |t| {
                barriers::self_collision_value(model, &Configuration::new(t.clone()), &planes, problem.self_barrier)
                    .unwrap_or(f64::NAN)
            },
            at,
            spec,
        )?;
        errs.self_barrier = errs.self_barrier.max(rel_err(&lr.gradient, &fd));
    }
    Ok(errs)
}

/// Exact object-barrier Hessian against differences of the analytic gradient.
pub fn measure_barrier_hessian(prepared: &Prepared, states: &[Configuration]) -> Result<f64> {
    let problem = &prepared.problem;
    let model = &problem.model;
    let mut worst = 0.0f64;
    for cfg in states {
        let exact = problem.object_barrier.evaluate_with(model, cfg, HessianKind::Exact)?;
        let fd = oracles::fd_jacobian(
            |t| {
                problem
                    .object_barrier
                    .evaluate_with(model, &Configuration::new(t.clone()), HessianKind::Exact)
                    .map(|e| e.gradient)
                    .unwrap_or_else(|_| DVector::from_element(t.len(), f64::NAN))
            },
            &cfg.theta,
            FdSpec::default(),
        )?;
        let scale = fd.amax();
        if scale > 0.0 {
            worst = worst.max((&exact.hessian - &fd).amax() / scale);
        }
    }
    Ok(worst)
}

/// A random SQP subproblem. Constraint gradients span a few scales, as on
/// the fixtures, where `∂G/∂θ` is orders of magnitude below the barrier terms.
pub fn random_qp(rng: &mut impl Rng, max_dim: usize, max_dirs: usize) -> QpInstance {
    let n = rng.random_range(1..=max_dim);
    let d = rng.random_range(1..=max_dirs);
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &b * b.transpose() + DMatrix::identity(n, n) * 10f64.powf(rng.random_range(-6.0..0.0));
    let g_scale = 10f64.powf(rng.random_range(-6.0..0.0));
    // a low-rank gradient set with noise, like D directions sharing few contacts
    let rank = rng.random_range(1..=n.min(6));
    let basis = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    let mix = DMatrix::from_fn(d, rank, |_, _| rng.random_range(-1.0..1.0));
    let noise = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1e-3..1e-3));
    let dg = (mix * basis + noise) * g_scale;
    let g = DVector::from_fn(d, |_, _| g_scale * rng.random_range(0.0..1.0));
    let q = g.min() - g_scale * rng.random_range(0.0..0.5);
    let lower = DVector::from_fn(n, |_, _| -rng.random_range(0.0..0.5));
    let upper = DVector::from_fn(n, |_, _| rng.random_range(0.0..0.5));
    QpInstance { h, grad_l: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), g, dg, q, lower, upper }
}

/// Objective gap between the active-set solver and the interior-point
/// reference, relative to `1 + |objective|`. Any solver error counts as a
/// failure.
#[derive(Clone, Copy, Debug, Default)]
pub struct QpComparison {
    pub worst_gap: f64,
    pub failures: usize,
}

pub fn measure_qp(rng: &mut impl Rng, count: usize, max_dim: usize, max_dirs: usize) -> QpComparison {
    let mut out = QpComparison::default();
    for _ in 0..count {
        let inst = random_qp(rng, max_dim, max_dirs);
        let general = inst.general_form();
        let ours = sqp::solve_qp(&inst);
        let reference = oracles::reference_qp(&general.p, &general.c, &general.a, &general.b);
        match (ours, reference) {
            (Ok(s), Ok(r)) => {
                let gap = (s.objective - r.objective).abs() / (1.0 + r.objective.abs());
                out.worst_gap = out.worst_gap.max(gap);
            }
            _ => out.failures += 1,
        }
    }
    out
}

/// Properties of a solver trace.
#[derive(Clone, Copy, Debug, Default)]
pub struct TraceCheck {
    /// Largest `φ_trial − (φ_prev + cΘDφ)` over accepted steps, relative to
    /// `1 + |φ_prev|`. Non-positive when every step satisfies Armijo.
    pub armijo_excess: f64,
    /// Largest increase of the post-reset merit between iterations.
    pub merit_increase: f64,
    pub rho_decrease: f64,
    pub all_finite: bool,
}

pub fn check_trace(trace: &[TraceRecord], c: f64) -> TraceCheck {
    let mut out = TraceCheck { armijo_excess: f64::NEG_INFINITY, all_finite: true, ..Default::default() };
    let mut prev: Option<&TraceRecord> = None;
    for t in trace {
        out.all_finite &= t.phi.is_finite() && t.l_o.is_finite() && t.l_r.is_finite();
        if t.step_length > 0.0 {
            let bound = t.phi_prev + c * t.step_length * t.d_phi;
            out.armijo_excess = out.armijo_excess.max((t.phi_trial - bound) / (1.0 + t.phi_prev.abs()));
        }
        if let Some(p) = prev {
            out.merit_increase = out.merit_increase.max(t.phi - p.phi);
            out.rho_decrease = out.rho_decrease.max(p.rho - t.rho);
        }
        prev = Some(t);
    }
    out
}

/// Line search along a direction that makes no progress while claiming a
/// negative slope. Sufficient decrease can never hold there, so a correct
/// line search rejects every trial.
pub fn flat_direction_accepted(prepared: &Prepared, cfg: &Configuration, params: &SolverParams) -> Result<bool> {
    let problem = &prepared.problem;
    let planes = barriers::init_separating_planes(&problem.model, cfg)?;
    let merit = sqp::merit_value(cfg, 0.0, &planes, params.rho0, problem)?;
    let slack = merit.min_g();
    let phi0 = sqp::merit_value(cfg, slack, &planes, params.rho0, problem)?.phi;
    let state = sqp::SqpState {
        cfg: cfg.clone(),
        slack,
        planes,
        rho: params.rho0,
        iteration: 0,
        last_step_norm: f64::INFINITY,
    };
    let zero = DVector::zeros(cfg.len());
    let found = sqp::line_search(&state, &zero, 0.0, phi0, -(1.0 + phi0.abs()), params, problem)?;
    Ok(found.is_some())
}

/// `lemma1_limit_integral` at each `α`.
pub fn lemma1_sequence(alphas: &[f64], delta_r: f64) -> Result<Vec<f64>> {
    alphas.iter().map(|&a| lemma1_limit_integral(a, delta_r)).collect()
}

/// Fault injection for the mutation tests of the suite itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    #[doc(hidden)]
    pub flip_c_sign: bool,
    #[doc(hidden)]
    pub flip_armijo_sign: bool,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult { name, passed, detail, seconds: t.elapsed().as_secs_f64() }
}

fn small_config() -> RunConfig {
    RunConfig { poisson_r: Some(0.04), directions: 32, ..RunConfig::default() }
}

/// Runs every check at its default tolerance.
pub fn run(options: &VerifyOptions) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut results = Vec::new();

    results.push(timed("fgt_values_and_gradients", || {
        let production = FgtOptions { flip_c_sign: options.flip_c_sign, ..Default::default() };
        let mut worst = 0.0f64;
        for (i, n) in [200, 600, 1500].into_iter().enumerate() {
            let (s, st, t) = random_fgt_instance(&mut rng, n, n, i % 2 == 1)?;
            worst = worst.max(fgt_error_ratio(&s, &st, &t, 1e-3, 1e-6, &production)?);
        }
        // a threshold of one sends every source box through the expansions;
        // a looser epsilon keeps the order, and so the cost, down
        let forced = FgtOptions { direct_threshold: Some(1), flip_c_sign: options.flip_c_sign };
        let (s, st, t) = random_fgt_instance(&mut rng, 60, 60, true)?;
        let expanded = fgt_error_ratio(&s, &st, &t, 1e-2, 1e-3, &forced)?;
        let ok = worst < 1e-6 && expanded < 1e-3;
        Ok((ok, format!("max err / sum|S| = {worst:.2e} (limit 1e-6), all expanded {expanded:.2e} (limit 1e-3)")))
    }));

    results.push(timed("gd_closed_form", || {
        let worst = measure_gd_strength(&mut rng, 1000, 720);
        Ok((worst < 1e-3, format!("max rel gap vs 720-ray cone = {worst:.2e} (limit 1e-3)")))
    }));

    results.push(timed("gradients_vs_fd", || {
        let mut worst = GradientErrors::default();
        let mut hess = 0.0f64;
        for fixture in [Fixture::ParallelJaw, Fixture::Claw] {
            let prepared = sphere_problem(fixture, &small_config())?;
            let states = random_feasible_states(&prepared, &mut rng, 4)?;
            let e = measure_gradients(&prepared, &states)?;
            worst.metric = worst.metric.max(e.metric);
            worst.object_barrier = worst.object_barrier.max(e.object_barrier);
            worst.self_barrier = worst.self_barrier.max(e.self_barrier);
            hess = hess.max(measure_barrier_hessian(&prepared, &states[..1])?);
        }
        let ok = worst.metric < 1e-4 && worst.object_barrier < 1e-4 && worst.self_barrier < 1e-4 && hess < 1e-3;
        Ok((
            ok,
            format!(
                "dG {:.1e}, dLo {:.1e}, dLr {:.1e} (limit 1e-4); Lo Hessian {hess:.1e} (limit 1e-3)",
                worst.metric, worst.object_barrier, worst.self_barrier
            ),
        ))
    }));

    results.push(timed("qp_vs_interior_point", || {
        let r = measure_qp(&mut rng, 50, 30, 128);
        Ok((
            r.failures == 0 && r.worst_gap < 1e-6,
            format!("worst gap {:.1e} (limit 1e-6), {} failures", r.worst_gap, r.failures),
        ))
    }));

    results.push(timed("merit_decrease", || {
        let config = RunConfig { max_iters: 15, ..small_config() };
        let prepared = sphere_problem(Fixture::ParallelJaw, &config)?;
        let init = planner::initial_configuration(&prepared.problem, &Vec3::from(config.approach))?;
        let params = SolverParams { flip_armijo_sign: options.flip_armijo_sign, ..config.solver_params() };
        let out = sqp::solve(&prepared.problem, &init, None, &params)?;
        let t = check_trace(&out.trace, config.c);
        let probe = flat_direction_accepted(&prepared, &init, &params)?;
        let ok = t.all_finite && t.armijo_excess <= 1e-12 && t.merit_increase <= 1e-12 && t.rho_decrease <= 0.0 && !probe;
        Ok((
            ok,
            format!(
                "{} steps, Armijo excess {:.1e}, merit increase {:.1e}, rho decrease {:.1e}, finite {}, flat direction accepted {probe}",
                out.trace.len(),
                t.armijo_excess,
                t.merit_increase,
                t.rho_decrease,
                t.all_finite
            ),
        ))
    }));

    results.push(timed("lemma1_limit", || {
        let v = lemma1_sequence(&[1e-4, 1e-8, 1e-16, 1e-30], 0.1)?;
        let monotone = v.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs());
        let last = v[v.len() - 1];
        Ok((monotone && (last - 1.0).abs() < 0.05, format!("values {v:.4?}")))
    }));

    results
}

/// Plain-text table with one line per check.
pub fn report(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{:<4}  {:<width$}  {:>7.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        ));
    }
    s
}
