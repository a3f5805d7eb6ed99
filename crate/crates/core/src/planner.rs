//! End-to-end planning: configuration files, problem setup, initialization and
//! the FGT timing sweep.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::barriers::{self, BarrierConfig, ObjectBarrier};
use crate::grasp::{sample_wrench_directions, FrictionCone, GraspMetric, KernelBackend, WrenchDirectionSet};
use crate::io::{self, NormalConvention, OrientedCloud};
use crate::kinematics::{Configuration, KinematicModel};
use crate::sampling::{poisson_disk_cloud, sample_links, SurfaceSamples};
use crate::sqp::{self, Problem, SolveOutput, SolverParams};
use crate::{fgt, so3, Error, Result, Vec3};

/// Poisson radius relative to the object's bounding-box diagonal.
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub object: PathBuf,
    pub gripper: PathBuf,
    /// Orientation of the normals stored in the object file.
    pub normals: NormalConvention,
    pub directions: usize,
    pub alpha: f64,
    /// Number of times `alpha` is halved after the first solve, restarting
    /// the solver from the previous result each time.
    pub alpha_schedule: usize,
    pub epsilon_fgt: f64,
    pub mu: f64,
    pub gamma_obj: f64,
    pub gamma_self: f64,
    pub beta: f64,
    pub c: f64,
    pub tau: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Defaults to 2% of the normalized object's bounding-box diagonal.
    pub poisson_r: Option<f64>,
    /// Defaults to twice the Poisson radius.
    pub d0: Option<f64>,
    /// World direction from the object toward the initial palm position.
    pub approach: [f64; 3],
    pub output: PathBuf,
    pub brute_force: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            object: PathBuf::new(),
            gripper: PathBuf::new(),
            normals: NormalConvention::Outward,
            directions: 128,
            alpha: 1e-3,
            alpha_schedule: 0,
            epsilon_fgt: 1e-6,
            mu: 0.7,
            gamma_obj: 0.1,
            gamma_self: 0.1,
            beta: 0.5,
            c: 0.1,
            tau: 1e-10,
            max_iters: 500,
            seed: 0,
            poisson_r: None,
            d0: None,
            approach: [0.0, 0.0, 1.0],
            output: PathBuf::from("out"),
            brute_force: false,
        }
    }
}

fn toml_error(path: &Path, text: &str, e: &toml::de::Error) -> Error {
    let location = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line} column {col}")
        }
        None => "document".to_string(),
    };
    Error::parse(path, location, e.message().to_string())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io::read_text(path)?;
    toml::from_str(&text).map_err(|e| toml_error(path, &text, &e))
}

impl RunConfig {
    /// Reads a TOML config; relative paths are taken relative to its directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = parse_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.object);
        resolve(base, &mut cfg.gripper);
        resolve(base, &mut cfg.output);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(what.to_string()));
        if self.object.as_os_str().is_empty() {
            return bad("object path is required");
        }
        if self.gripper.as_os_str().is_empty() {
            return bad("gripper path is required");
        }
        if self.directions == 0 {
            return bad("directions must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.epsilon_fgt > 0.0 && self.epsilon_fgt < 1.0) {
            return bad("epsilon_fgt must lie in (0, 1)");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu must be non-negative");
        }
        if !(self.gamma_obj > 0.0 && self.gamma_self > 0.0) {
            return bad("barrier weights must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.poisson_r.is_some_and(|r| !(r > 0.0)) || self.d0.is_some_and(|d| !(d > 0.0)) {
            return bad("poisson_r and d0 must be positive");
        }
        if !(Vec3::from(self.approach).norm() > 0.0) {
            return bad("approach direction must be non-zero");
        }
        self.solver_params().validate()
    }

    pub fn solver_params(&self) -> SolverParams {
        SolverParams { beta: self.beta, c: self.c, tau: self.tau, max_iters: self.max_iters, ..SolverParams::default() }
    }

    pub fn backend(&self) -> KernelBackend {
        if self.brute_force {
            KernelBackend::BruteForce
        } else {
            KernelBackend::Fgt { epsilon: self.epsilon_fgt }
        }
    }
}

/// Object cloud with inward normals, translated and scaled to a unit
/// bounding-box diagonal.
pub fn load_normalized_object(path: &Path, normals: NormalConvention) -> Result<(OrientedCloud, Vec3, f64)> {
    let mut cloud = io::load_object(path, normals)?;
    let (centroid, scale) = io::normalize(&mut cloud);
    Ok((cloud, centroid, scale))
}

/// A fully set-up planning problem.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub problem: Problem,
    pub object: SurfaceSamples,
    pub gripper: SurfaceSamples,
    pub directions: WrenchDirectionSet,
    pub radius: f64,
    pub d0: f64,
    pub centroid: Vec3,
    pub scale: f64,
}

/// Builds the problem from already loaded inputs.
pub fn prepare_with(config: &RunConfig, model: KinematicModel, cloud: &OrientedCloud) -> Result<Prepared> {
    let radius = config.poisson_r.unwrap_or(DEFAULT_RADIUS_FRACTION);
    let d0 = config.d0.unwrap_or(2.0 * radius);
    let object = poisson_disk_cloud(&cloud.points, &cloud.normals, radius, config.seed)?;
    let hulls: Vec<_> = model.links().iter().map(|l| &l.hull).collect();
    let gripper = sample_links(&hulls, radius, config.seed.wrapping_add(1))?;
    let directions = sample_wrench_directions(config.directions, config.seed)?;
    let cone = FrictionCone { mu: config.mu };
    let metric = GraspMetric::new(&object, &gripper, &directions, &cone, config.alpha, config.backend())?;
    let object_barrier = ObjectBarrier::new(object.positions(), BarrierConfig::new(config.gamma_obj, d0)?);
    let problem = Problem { model, metric, object_barrier, self_barrier: BarrierConfig::new(config.gamma_self, d0)? };
    Ok(Prepared {
        config: config.clone(),
        problem,
        object,
        gripper,
        directions,
        radius,
        d0,
        centroid: Vec3::zeros(),
        scale: 1.0,
    })
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let (cloud, centroid, scale) = load_normalized_object(&config.object, config.normals)?;
    let model = io::load_gripper(&config.gripper)?;
    let mut p = prepare_with(config, model, &cloud)?;
    p.centroid = centroid;
    p.scale = scale;
    Ok(p)
}

/// Palm on the object's bounding sphere along `approach` with the fingers
/// (local `−z`) pointing back at the object, 1-DOF joints at mid-range, then
/// moved outward in steps of `d0 / 2` until no object point touches a link.
pub fn initial_configuration(problem: &Problem, approach: &Vec3) -> Result<Configuration> {
    let model = &problem.model;
    let points = problem.metric.object_points();
    let a = approach.normalize();
    let center = points.iter().sum::<Vec3>() / points.len() as f64;
    let radius = points.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
    let mut theta = vec![0.0; model.dof_count()];
    let w = so3::rotation_between(&Vec3::z(), &a);
    theta[3..6].copy_from_slice(w.as_slice());
    for l in 1..model.link_count() {
        if let Some([lo, hi]) = model.joint_limits(l) {
            theta[model.dof_of_link(l)] = 0.5 * (lo + hi);
        }
    }
    let step = 0.5 * problem.object_barrier.config().d0;
    barriers::init_separating_planes(model, &Configuration::from_slice(&theta))?;
    for k in 0..4000 {
        let p = center + a * (radius + k as f64 * step);
        theta[..3].copy_from_slice(p.as_slice());
        let cfg = Configuration::from_slice(&theta);
        if problem.object_barrier.value(model, &cfg)?.is_finite() {
            return Ok(cfg);
        }
    }
    Err(Error::InfeasibleInit("no collision-free retreat found along the approach axis".into()))
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub prepared: Prepared,
    pub init: Configuration,
    pub init_q_inf: f64,
    pub output: SolveOutput,
    pub wall_time_s: f64,
}

pub fn plan_prepared(mut prepared: Prepared) -> Result<PlanResult> {
    let start = Instant::now();
    let init = initial_configuration(&prepared.problem, &Vec3::from(prepared.config.approach))?;
    let init_q_inf = prepared
        .problem
        .metric
        .values(&prepared.problem.model, &init)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let params = prepared.config.solver_params();
    let mut output = sqp::solve(&prepared.problem, &init, None, &params)?;
    let mut alpha = prepared.config.alpha;
    for _ in 0..prepared.config.alpha_schedule {
        alpha *= 0.5;
        let cone = FrictionCone { mu: prepared.config.mu };
        let metric = &mut prepared.problem.metric;
        *metric = GraspMetric::new(&prepared.object, &prepared.gripper, &prepared.directions, &cone, alpha, metric.backend())?;
        let done = output.state.iteration;
        let planes = output.state.planes.clone();
        let mut next = sqp::solve(&prepared.problem, &output.state.cfg, Some(planes), &params)?;
        for t in &mut next.trace {
            t.iteration += done;
        }
        next.state.iteration += done;
        output.trace.append(&mut next.trace);
        next.trace = std::mem::take(&mut output.trace);
        output = next;
    }
    Ok(PlanResult { prepared, init, init_q_inf, output, wall_time_s: start.elapsed().as_secs_f64() })
}

pub fn plan(config: &RunConfig) -> Result<PlanResult> {
    plan_prepared(prepare(config)?)
}

impl PlanResult {
    /// Contents of `result.json`.
    pub fn to_json(&self) -> serde_json::Value {
        let out = &self.output;
        let p = &self.prepared;
        json!({
            "schema": 1,
            "theta": out.state.cfg.theta.as_slice(),
            "q_inf": out.q_inf,
            "g": out.g,
            "argmin": out.argmin,
            "iterations": out.state.iteration,
            "termination": out.termination,
            "wall_time_s": self.wall_time_s,
            "alpha": p.problem.metric.alpha(),
            "backend": if p.config.brute_force { "brute_force" } else { "fgt" },
            "initial_theta": self.init.theta.as_slice(),
            "initial_q_inf": self.init_q_inf,
            "rho": out.state.rho,
            "object_samples": p.object.len(),
            "gripper_samples": p.gripper.len(),
            "poisson_r": p.radius,
            "d0": p.d0,
            "normalization": { "centroid": p.centroid.as_slice(), "scale": p.scale },
        })
    }

    /// Gripper hulls at the final configuration, in normalized object coordinates.
    pub fn pose_obj(&self) -> Result<String> {
        let model = &self.prepared.problem.model;
        Ok(io::pose_obj(model, &model.forward_kinematics(&self.output.state.cfg)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub object: PathBuf,
    pub gripper: PathBuf,
    pub normals: NormalConvention,
    pub densities: Vec<f64>,
    /// Poisson radius at density 1; density `k` uses `r / √k`.
    pub poisson_r: f64,
    pub alpha: f64,
    pub epsilon_fgt: f64,
    pub mu: f64,
    pub directions: usize,
    pub seed: u64,
    pub approach: [f64; 3],
    /// Timing repetitions; the fastest is reported.
    pub repeats: usize,
    pub output: PathBuf,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            object: PathBuf::new(),
            gripper: PathBuf::new(),
            normals: NormalConvention::Outward,
            densities: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            poisson_r: DEFAULT_RADIUS_FRACTION,
            alpha: 1e-3,
            epsilon_fgt: 1e-6,
            mu: 0.7,
            directions: 128,
            seed: 0,
            approach: [0.0, 0.0, 1.0],
            repeats: 1,
            output: PathBuf::from("fgt_bench.csv"),
        }
    }
}

impl BenchConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let mut cfg: BenchConfig = parse_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.object);
        resolve(base, &mut cfg.gripper);
        resolve(base, &mut cfg.output);
        Ok(cfg)
    }

    fn run_config(&self, density: f64) -> RunConfig {
        RunConfig {
            object: self.object.clone(),
            gripper: self.gripper.clone(),
            normals: self.normals,
            directions: self.directions,
            alpha: self.alpha,
            epsilon_fgt: self.epsilon_fgt,
            mu: self.mu,
            seed: self.seed,
            poisson_r: Some(self.poisson_r / density.sqrt()),
            approach: self.approach,
            ..RunConfig::default()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub density: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub time_fgt_ms: f64,
    pub time_brute_ms: f64,
    pub max_abs_err: f64,
    pub q_inf_fgt: f64,
    pub q_inf_brute: f64,
    /// Largest per-channel error divided by that channel's `Σ|S|`.
    #[serde(skip)]
    pub max_rel_err: f64,
}

fn time_min<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
        out = Some(v);
    }
    Ok((out.expect("at least one repetition"), best))
}

/// One timing row: the gradient kernel pass by FGT and by direct summation at
/// the initial configuration.
pub fn bench_row(prepared: &Prepared, density: f64, repeats: usize) -> Result<BenchRow> {
    let problem = &prepared.problem;
    let model = &problem.model;
    let cfg = initial_configuration(problem, &Vec3::from(prepared.config.approach))?;
    let poses = model.forward_kinematics(&cfg)?;
    let metric = &problem.metric;
    let (sources, strengths) = metric.kernel_inputs(&poses, true)?;
    let targets = metric.object_points();
    let alpha = metric.alpha();
    let eps = prepared.config.epsilon_fgt;
    let (fast, time_fgt_ms) = time_min(repeats, || fgt::fgt_evaluate(&sources, &strengths, targets, alpha, eps))?;
    let (slow, time_brute_ms) = time_min(repeats, || fgt::brute_force_sum(&sources, &strengths, targets, alpha))?;
    let diffs = fast.max_abs_diff(&slow);
    let max_abs_err = diffs.iter().copied().fold(0.0, f64::max);
    let mut max_rel_err = 0.0f64;
    for g in 0..strengths.groups() {
        for c in 0..strengths.width() {
            let s = strengths.abs_sum(g, c);
            let e = diffs[g * strengths.width() + c];
            if s > 0.0 {
                max_rel_err = max_rel_err.max(e / s);
            } else if e > 0.0 {
                max_rel_err = f64::INFINITY;
            }
        }
    }
    let q = |backend| -> Result<f64> {
        Ok(metric.with_backend(backend).values(model, &cfg)?.into_iter().fold(f64::INFINITY, f64::min))
    };
    Ok(BenchRow {
        density,
        n: targets.len(),
        m: sources.len(),
        time_fgt_ms,
        time_brute_ms,
        max_abs_err,
        q_inf_fgt: q(KernelBackend::Fgt { epsilon: eps })?,
        q_inf_brute: q(KernelBackend::BruteForce)?,
        max_rel_err,
    })
}

pub fn fgt_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.densities.is_empty() || config.densities.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::invalid("densities must be positive"));
    }
    let (cloud, _, _) = load_normalized_object(&config.object, config.normals)?;
    let model = io::load_gripper(&config.gripper)?;
    let mut rows = Vec::new();
    for &density in &config.densities {
        let rc = config.run_config(density);
        rc.validate()?;
        let prepared = prepare_with(&rc, model.clone(), &cloud)?;
        rows.push(bench_row(&prepared, density, config.repeats)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults_and_errors() {
        let dir = std::env::temp_dir().join(format!("kigrasp-planner-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("run.toml");
        std::fs::write(&p, "object = \"a.ply\"\ngripper = \"g.json\"\nmu = 0.5\n").unwrap();
        let c = RunConfig::from_toml_file(&p).unwrap();
        assert_eq!(c.mu, 0.5);
        assert_eq!(c.directions, 128);
        assert_eq!(c.object, dir.join("a.ply"));
        std::fs::write(&p, "object = \"a.ply\"\n\nmu = \"high\"\n").unwrap();
        let e = RunConfig::from_toml_file(&p).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        std::fs::write(&p, "colour = 1\n").unwrap();
        assert!(RunConfig::from_toml_file(&p).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
