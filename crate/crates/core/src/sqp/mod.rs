//! Line-search SQP on the slack form of the grasp problem
//!
//! ```text
//! min_{θ, Q}  L(θ) − Q    s.t.  Q ≤ G_d(θ)  for every direction d
//! ```
//!
//! with `L = L_o + L_r`, the exact l1 merit `φ = L − Q + ρ Σ_d |min(0, G_d − Q)|`
//! and separating planes updated by block coordinate descent after every step.

mod qp;

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::barriers::{self, BarrierConfig, ObjectBarrier, PairPlane};
use crate::grasp::{GraspMetric, GraspObjective};
use crate::kinematics::{Configuration, KinematicModel};
use crate::{par, Error, Result};

pub use qp::{solve_qp, GeneralQp, QpInstance, QpSolution};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    /// Fraction of the penalty decrease reserved when raising `ρ`.
    pub gamma: f64,
    pub beta: f64,
    /// Armijo constant.
    pub c: f64,
    pub tau: f64,
    pub max_iters: usize,
    pub hessian_floor: f64,
    /// Per-iteration bound on `‖Δθ‖∞`.
    pub trust_cap: f64,
    pub rho0: f64,
    /// Smallest line-search step before giving up.
    pub min_step: f64,
    #[doc(hidden)]
    pub flip_armijo_sign: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            gamma: 0.1,
            beta: 0.5,
            c: 0.1,
            tau: 1e-10,
            max_iters: 500,
            hessian_floor: 1e-6,
            trust_cap: 0.5,
            rho0: 1.0,
            min_step: 1e-12,
            flip_armijo_sign: false,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(unit(self.gamma) && unit(self.beta) && unit(self.c)) {
            return Err(Error::invalid("gamma, beta and c must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.hessian_floor > 0.0 && self.trust_cap > 0.0 && self.min_step > 0.0) {
            return Err(Error::invalid("tau, hessian floor, trust cap and minimum step must be positive"));
        }
        if !(self.rho0 >= 1.0) {
            return Err(Error::invalid("initial rho must be at least 1"));
        }
        Ok(())
    }
}

/// Everything the solver evaluates.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: KinematicModel,
    pub metric: GraspMetric,
    pub object_barrier: ObjectBarrier,
    pub self_barrier: BarrierConfig,
}

#[derive(Clone, Debug)]
pub struct SqpState {
    pub cfg: Configuration,
    pub slack: f64,
    pub planes: Vec<PairPlane>,
    pub rho: f64,
    pub iteration: usize,
    pub last_step_norm: f64,
}

/// Merit value and the pieces it is made of.
#[derive(Clone, Debug)]
pub struct MeritEval {
    pub phi: f64,
    pub l_o: f64,
    pub l_r: f64,
    /// `G_d`; empty when a barrier is infinite.
    pub g: Vec<f64>,
    pub violation: f64,
}

impl MeritEval {
    pub fn finite(&self) -> bool {
        self.phi.is_finite()
    }

    pub fn min_g(&self) -> f64 {
        self.g.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `Σ_d |min(0, G_d − Q)|`.
pub fn violation(g: &[f64], q: f64) -> f64 {
    g.iter().map(|&gd| (q - gd).max(0.0)).sum()
}

pub fn merit_value(theta: &Configuration, q: f64, planes: &[PairPlane], rho: f64, problem: &Problem) -> Result<MeritEval> {
    let l_o = problem.object_barrier.value(&problem.model, theta)?;
    let l_r = barriers::self_collision_value(&problem.model, theta, planes, problem.self_barrier)?;
    if !l_o.is_finite() || !l_r.is_finite() {
        return Ok(MeritEval { phi: f64::INFINITY, l_o, l_r, g: Vec::new(), violation: 0.0 });
    }
    let g = problem.metric.values(&problem.model, theta)?;
    let v = violation(&g, q);
    Ok(MeritEval { phi: l_o + l_r - q + rho * v, l_o, l_r, g, violation: v })
}

/// Clamp eigenvalues below `floor` up to `floor`.
pub fn psd_project(h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Upper bound on the merit's directional derivative along `(Δθ, ΔQ)`.
pub fn directional_derivative(dtheta: &DVector<f64>, dq: f64, grad_l: &DVector<f64>, g: &[f64], q: f64, rho: f64) -> f64 {
    dtheta.dot(grad_l) - dq - rho * violation(g, q)
}

/// Smallest admissible `ρ` that makes the bound above at most `−γρΣ|min(0, G_d − Q)|`.
pub fn update_rho(rho: f64, dtheta: &DVector<f64>, dq: f64, grad_l: &DVector<f64>, g: &[f64], q: f64, gamma: f64) -> f64 {
    let den = (1.0 - gamma) * violation(g, q);
    if den <= 1e-14 {
        return rho;
    }
    rho.max(1.01 * (dtheta.dot(grad_l) - dq) / den)
}

#[derive(Clone, Debug)]
pub struct LineSearchResult {
    pub step: f64,
    pub cfg: Configuration,
    pub slack: f64,
    pub merit: MeritEval,
    pub trials: usize,
}

/// Backtracking until `φ(θ + ΘΔθ, Q + ΘΔQ) ≤ φ0 + cΘDφ`. `None` when `Θ` drops
/// below `params.min_step`.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    state: &SqpState,
    dtheta: &DVector<f64>,
    dq: f64,
    phi0: f64,
    d_phi: f64,
    params: &SolverParams,
    problem: &Problem,
) -> Result<Option<LineSearchResult>> {
    let slope = if params.flip_armijo_sign { -d_phi.min(0.0) } else { d_phi.min(0.0) };
    let mut step = 1.0;
    let mut trials = 0;
    while step >= params.min_step {
        trials += 1;
        let cfg = Configuration::new(&state.cfg.theta + dtheta * step);
        let slack = state.slack + step * dq;
        let merit = merit_value(&cfg, slack, &state.planes, state.rho, problem)?;
        if merit.finite() && merit.phi <= phi0 + params.c * step * slope {
            return Ok(Some(LineSearchResult { step, cfg, slack, merit, trials }));
        }
        step *= params.beta;
    }
    Ok(None)
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Merit at the accepted iterate after the slack reset.
    pub phi: f64,
    pub q_inf: f64,
    /// Accepted line-search step `Θ`.
    pub step_length: f64,
    pub rho: f64,
    pub step_norm: f64,
    pub ms: f64,
    pub phi_prev: f64,
    /// Merit at the accepted trial point, before the slack reset.
    pub phi_trial: f64,
    pub d_phi: f64,
    pub l_o: f64,
    pub l_r: f64,
    pub qp_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    IterationCap,
    Stall,
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub state: SqpState,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    /// `G_d` at the final configuration.
    pub g: Vec<f64>,
    pub q_inf: f64,
    pub argmin: usize,
}

fn step_bounds(model: &KinematicModel, cfg: &Configuration, cap: f64) -> (DVector<f64>, DVector<f64>) {
    let n = model.dof_count();
    let mut lower = DVector::from_element(n, -cap);
    let mut upper = DVector::from_element(n, cap);
    for l in 1..model.link_count() {
        if let Some([lo, hi]) = model.joint_limits(l) {
            let k = model.dof_of_link(l);
            lower[k] = lower[k].max(lo - cfg.theta[k]).min(0.0);
            upper[k] = upper[k].min(hi - cfg.theta[k]).max(0.0);
        }
    }
    (lower, upper)
}

/// QP for the current state: barrier Hessian projected to PSD, trust and joint
/// bounds on `Δθ`.
pub fn build_and_solve_qp(
    state: &SqpState,
    objective: &GraspObjective,
    barrier_grad: &DVector<f64>,
    h: &DMatrix<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
) -> Result<QpSolution> {
    let inst = QpInstance {
        h: h.clone(),
        grad_l: barrier_grad.clone(),
        g: DVector::from_vec(objective.g.clone()),
        dg: objective.dg.clone(),
        q: state.slack,
        lower,
        upper,
    };
    solve_qp(&inst)
}

fn min_index(g: &[f64]) -> (f64, usize) {
    g.iter().copied().enumerate().fold((f64::INFINITY, 0), |acc, (i, v)| if v < acc.0 { (v, i) } else { acc })
}

/// Runs the SQP from `init`, which must be collision free. Planes are
/// initialized from `init` when `planes` is `None`.
pub fn solve(problem: &Problem, init: &Configuration, planes: Option<Vec<PairPlane>>, params: &SolverParams) -> Result<SolveOutput> {
    params.validate()?;
    let model = &problem.model;
    let planes = match planes {
        Some(p) => p,
        None => barriers::init_separating_planes(model, init)?,
    };
    let mut state = SqpState { cfg: init.clone(), slack: 0.0, planes, rho: params.rho0, iteration: 0, last_step_norm: f64::INFINITY };
    let start = merit_value(&state.cfg, 0.0, &state.planes, state.rho, problem)?;
    if !start.finite() {
        return Err(Error::InfeasibleInit(format!(
            "initial configuration is in collision (object barrier {}, self-collision barrier {})",
            start.l_o, start.l_r
        )));
    }
    state.slack = start.min_g();
    let mut g_now = start.g;
    let mut trace = Vec::new();
    let mut termination = Termination::IterationCap;

    for k in 0..params.max_iters {
        let t0 = Instant::now();
        let objective = problem.metric.evaluate(model, &state.cfg)?;
        let lo = problem.object_barrier.evaluate(model, &state.cfg)?;
        let lr = barriers::self_collision_barrier(model, &state.cfg, &state.planes, problem.self_barrier)?;
        if !lo.finite || !lr.finite {
            return Err(Error::Numerical("accepted iterate lost strict feasibility".into()));
        }
        let grad_l = &lo.gradient + &lr.gradient;
        let h = psd_project(&(&lo.hessian + &lr.hessian), params.hessian_floor);
        let (lower, upper) = step_bounds(model, &state.cfg, params.trust_cap);
        let sol = build_and_solve_qp(&state, &objective, &grad_l, &h, lower, upper)?;
        state.rho = update_rho(state.rho, &sol.dtheta, sol.dq, &grad_l, &objective.g, state.slack, params.gamma);
        let d_phi = directional_derivative(&sol.dtheta, sol.dq, &grad_l, &objective.g, state.slack, state.rho);
        let phi_prev = lo.value + lr.value - state.slack + state.rho * violation(&objective.g, state.slack);
        let qp_norm = (sol.dtheta.norm_squared() + sol.dq * sol.dq).sqrt();

        let (step_length, phi_trial, merit) = if qp_norm < params.tau {
            (0.0, phi_prev, None)
        } else {
            match line_search(&state, &sol.dtheta, sol.dq, phi_prev, d_phi, params, problem)? {
                Some(ls) => {
                    state.cfg = ls.cfg;
                    (ls.step, ls.merit.phi, Some(ls.merit))
                }
                None => {
                    termination = Termination::Stall;
                    break;
                }
            }
        };
        let (l_o, l_r) = match &merit {
            Some(m) => {
                g_now = m.g.clone();
                (m.l_o, m.l_r)
            }
            None => (lo.value, lr.value),
        };
        state.slack = min_index(&g_now).0;

        let updated: Vec<Result<PairPlane>> = par::map(&state.planes, |pp| {
            let plane = barriers::update_separating_plane(pp.p, pp.q, model, &state.cfg, &pp.plane, problem.self_barrier)?;
            Ok(PairPlane { plane, ..*pp })
        });
        let mut plane_sq = 0.0;
        let mut new_planes = Vec::with_capacity(updated.len());
        for (old, new) in state.planes.iter().zip(updated) {
            let new = new?;
            plane_sq += old.plane.delta_norm(&new.plane).powi(2);
            new_planes.push(new);
        }
        state.planes = new_planes;
        let l_r_new = barriers::self_collision_value(model, &state.cfg, &state.planes, problem.self_barrier)?;
        debug_assert!(l_r_new <= l_r + 1e-9 * (1.0 + l_r.abs()));
        let phi_now = l_o + l_r_new - state.slack;

        state.iteration = k + 1;
        state.last_step_norm = (qp_norm * qp_norm + plane_sq).sqrt();
        trace.push(TraceRecord {
            iteration: k + 1,
            phi: phi_now,
            q_inf: state.slack,
            step_length,
            rho: state.rho,
            step_norm: state.last_step_norm,
            ms: t0.elapsed().as_secs_f64() * 1e3,
            phi_prev,
            phi_trial,
            d_phi,
            l_o,
            l_r: l_r_new,
            qp_iterations: sol.iterations,
        });
        if state.last_step_norm < params.tau {
            termination = Termination::Converged;
            break;
        }
    }
    let (q_inf, argmin) = min_index(&g_now);
    Ok(SolveOutput { state, trace, termination, g: g_now, q_inf, argmin })
}
