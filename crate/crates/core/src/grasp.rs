//! The relaxed Q∞ grasp metric and its configuration gradient.
//!
//! For each sampled wrench direction `w = [u; v]` every object point gets the
//! optimal unit-normal-force strength `s^d(x)`, and
//!
//! ```text
//! G^d(θ) = Σ_x a_x s^d(x) Σ_y a_y e^{-|x − y(θ)|²/α},    y(θ) = R_l(θ) y^l + t_l(θ)
//! ```
//!
//! The inner sums and their derivatives with respect to `(R_l, t_l)` come from
//! one kernel pass with sources grouped by link and four channels per link
//! (`a_y` and `a_y y^l_j`), then the link Jacobians map them to `θ`.

use nalgebra::{DMatrix, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fgt::{self, ChannelStrengths, FgtOutput};
use crate::kinematics::{Configuration, KinematicModel, Pose};
use crate::sampling::{PointSample, SurfaceSamples};
use crate::{par, Error, Result, Vec3};

pub type Wrench = Vector6<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct WrenchDirectionSet {
    pub directions: Vec<Wrench>,
}

impl WrenchDirectionSet {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// `D` unit 6-vectors from normalized standard-normal draws.
pub fn sample_wrench_directions(d: usize, seed: u64) -> Result<WrenchDirectionSet> {
    if d == 0 {
        return Err(Error::invalid("at least one wrench direction is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions = Vec::with_capacity(d);
    while directions.len() < d {
        let w = Wrench::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let n = w.norm();
        if n > 1e-12 {
            directions.push(w / n);
        }
    }
    Ok(WrenchDirectionSet { directions })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrictionCone {
    pub mu: f64,
}

/// Maximizer of `⟨w, [f; x × f]⟩` over forces in the friction cone at `x`
/// with normal component at most 1. Returns `(s, f)`.
pub fn compute_gd_strength(x: &PointSample, w: &Wrench, cone: &FrictionCone) -> (f64, Vec3) {
    let u = Vec3::new(w[0], w[1], w[2]);
    let v = Vec3::new(w[3], w[4], w[5]);
    let n = x.normal;
    // ⟨v, x × f⟩ = ⟨v × x, f⟩
    let q = u + v.cross(&x.position);
    let qn = q.dot(&n);
    let qt = q - n * qn;
    let qt_norm = qt.norm();
    let s = qn + cone.mu * qt_norm;
    if s <= 0.0 {
        return (0.0, Vec3::zeros());
    }
    let f = if qt_norm > 0.0 { n + qt * (cone.mu / qt_norm) } else { n };
    (s, f)
}

/// Where the kernel sums come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelBackend {
    Fgt { epsilon: f64 },
    BruteForce,
}

#[derive(Clone, Debug)]
pub struct GraspObjective {
    /// `G^d` per direction.
    pub g: Vec<f64>,
    /// `∂G^d/∂θ`, `D × |θ|`.
    pub dg: DMatrix<f64>,
    pub q_inf: f64,
    /// Lowest index attaining the minimum.
    pub argmin: usize,
}

fn min_with_index(g: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, &v) in g.iter().enumerate() {
        if v < best.0 {
            best = (v, i);
        }
    }
    best
}

/// Everything about the metric that does not depend on `θ`.
#[derive(Clone, Debug)]
pub struct GraspMetric {
    object: Vec<Vec3>,
    /// `a_x s^d(x)`, `D × N`.
    weights: DMatrix<f64>,
    gripper: SurfaceSamples,
    links: Vec<usize>,
    alpha: f64,
    backend: KernelBackend,
}

impl GraspMetric {
    pub fn new(
        object: &SurfaceSamples,
        gripper: &SurfaceSamples,
        dirs: &WrenchDirectionSet,
        cone: &FrictionCone,
        alpha: f64,
        backend: KernelBackend,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if object.is_empty() || gripper.is_empty() {
            return Err(Error::invalid("object and gripper samples must be non-empty"));
        }
        let links = gripper
            .link_id
            .clone()
            .ok_or_else(|| Error::invalid("gripper samples need link ids"))?;
        let strengths: Vec<Vec<f64>> = par::map(&object.samples, |x| {
            dirs.directions.iter().map(|w| x.area_weight * compute_gd_strength(x, w, cone).0).collect()
        });
        let weights = DMatrix::from_fn(dirs.len(), object.len(), |d, i| strengths[i][d]);
        Ok(GraspMetric {
            object: object.positions(),
            weights,
            gripper: gripper.clone(),
            links,
            alpha,
            backend,
        })
    }

    pub fn directions(&self) -> usize {
        self.weights.nrows()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn backend(&self) -> KernelBackend {
        self.backend
    }

    pub fn with_backend(&self, backend: KernelBackend) -> Self {
        GraspMetric { backend, ..self.clone() }
    }

    /// Object sample positions (the kernel targets).
    pub fn object_points(&self) -> &[Vec3] {
        &self.object
    }

    /// Posed gripper samples and their channel strengths: one channel `a_y`
    /// without gradients, else `a_y` and `a_y y^l_j`, grouped by link.
    pub fn kernel_inputs(&self, poses: &[Pose], gradients: bool) -> Result<(Vec<Vec3>, ChannelStrengths)> {
        let link_count = poses.len();
        let sources: Vec<Vec3> = self
            .gripper
            .samples
            .iter()
            .zip(&self.links)
            .map(|(s, &l)| poses[l].apply(&s.position))
            .collect();
        let strengths = if gradients {
            let mut v = Vec::with_capacity(sources.len() * 4);
            for s in &self.gripper.samples {
                let a = s.area_weight;
                v.extend_from_slice(&[a, a * s.position.x, a * s.position.y, a * s.position.z]);
            }
            ChannelStrengths::new(4, link_count, self.links.clone(), v)?
        } else {
            let v = self.gripper.samples.iter().map(|s| s.area_weight).collect();
            ChannelStrengths::new(1, link_count, self.links.clone(), v)?.values_only()
        };
        Ok((sources, strengths))
    }

    fn kernel_pass(&self, poses: &[Pose], gradients: bool) -> Result<FgtOutput> {
        let (sources, strengths) = self.kernel_inputs(poses, gradients)?;
        match self.backend {
            KernelBackend::Fgt { epsilon } => fgt::fgt_evaluate(&sources, &strengths, &self.object, self.alpha, epsilon),
            KernelBackend::BruteForce => fgt::brute_force_sum(&sources, &strengths, &self.object, self.alpha),
        }
    }

    /// `G^d` for every direction, without gradients.
    pub fn values(&self, model: &KinematicModel, cfg: &Configuration) -> Result<Vec<f64>> {
        let poses = model.forward_kinematics(cfg)?;
        let l = model.link_count();
        let out = self.kernel_pass(&poses, false)?;
        let k = nalgebra::DVector::from_fn(self.object.len(), |x, _| (0..l).map(|g| out.get(x, g, 0)[0]).sum());
        Ok((&self.weights * k).iter().copied().collect())
    }

    pub fn evaluate(&self, model: &KinematicModel, cfg: &Configuration) -> Result<GraspObjective> {
        let derivs = model.all_link_derivatives(cfg, false)?;
        let poses: Vec<Pose> = derivs.iter().map(|d| d.pose).collect();
        let l = model.link_count();
        let out = self.kernel_pass(&poses, true)?;
        let n = self.object.len();
        let mut k = nalgebra::DVector::zeros(n);
        // per target: 12 transform derivatives per link
        let mut v = DMatrix::zeros(n, 12 * l);
        for x in 0..n {
            for g in 0..l {
                let c0 = out.get(x, g, 0);
                k[x] += c0[0];
                for i in 0..3 {
                    for j in 0..3 {
                        v[(x, 12 * g + 3 * i + j)] = out.get(x, g, 1 + j)[1 + i];
                    }
                    v[(x, 12 * g + 9 + i)] = c0[1 + i];
                }
            }
        }
        let g: Vec<f64> = (&self.weights * k).iter().copied().collect();
        let per_link = &self.weights * v;
        let mut jac = DMatrix::zeros(12 * l, model.dof_count());
        for (li, d) in derivs.iter().enumerate() {
            jac.view_mut((12 * li, 0), (12, model.dof_count())).copy_from(&d.jacobian);
        }
        let dg = per_link * jac;
        let (q_inf, argmin) = min_with_index(&g);
        Ok(GraspObjective { g, dg, q_inf, argmin })
    }
}

/// One-shot evaluation of `G^d` and `∂G^d/∂θ` with the fast Gauss transform.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_objective(
    object: &SurfaceSamples,
    gripper: &SurfaceSamples,
    model: &KinematicModel,
    cfg: &Configuration,
    dirs: &WrenchDirectionSet,
    cone: &FrictionCone,
    alpha: f64,
    epsilon: f64,
) -> Result<GraspObjective> {
    GraspMetric::new(object, gripper, dirs, cone, alpha, KernelBackend::Fgt { epsilon })?.evaluate(model, cfg)
}

/// `∫₀^{δr} −r / (log α (r² + α²)) dr`, which tends to 1 as `α → 0`.
pub fn lemma1_limit_integral(alpha: f64, delta_r: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(delta_r > 0.0) {
        return Err(Error::invalid(format!("delta_r must be positive, got {delta_r}")));
    }
    let la = alpha.ln();
    Ok((la - 0.5 * (delta_r * delta_r + alpha * alpha).ln()) / la)
}
