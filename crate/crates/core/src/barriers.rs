//! Log-barrier terms keeping the gripper off the object and its links apart.
//!
//! Object term: `L_o = γ Σ_x b(d_r(x, θ))` with the locally supported barrier
//! `b(d) = −(d/d0 − 1)² ln(d/d0)` for `d < d0` and zero beyond.
//!
//! Self-collision term: every pair of links that are not parent and child keeps
//! a plane `⟨n, y⟩ + n0` with link `p` on the positive side and link `q` on the
//! negative side, and `L_r = −γ Σ log(±(⟨n, y⟩ + n0))` over hull vertices.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::gjk;
use crate::hull::point_to_convex_distance;
use crate::kinematics::{point_derivative, Configuration, KinematicModel, LinkDerivatives};
use crate::{par, so3, Error, Mat3, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierConfig {
    pub gamma: f64,
    pub d0: f64,
}

impl BarrierConfig {
    pub fn new(gamma: f64, d0: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(d0 > 0.0) {
            return Err(Error::invalid(format!("barrier needs gamma > 0 and d0 > 0, got {gamma}, {d0}")));
        }
        Ok(BarrierConfig { gamma, d0 })
    }
}

/// `(b, b', b'')` of the locally supported barrier; `+∞` for `d ≤ 0`.
pub fn local_barrier(d: f64, d0: f64) -> (f64, f64, f64) {
    if d <= 0.0 {
        return (f64::INFINITY, 0.0, 0.0);
    }
    if d >= d0 {
        return (0.0, 0.0, 0.0);
    }
    let s = d / d0;
    let ln = s.ln();
    let m = s - 1.0;
    let b = -m * m * ln;
    let b1 = (-2.0 * m * ln - m * m / s) / d0;
    let b2 = (-2.0 * ln - 4.0 * m / s + m * m / (s * s)) / (d0 * d0);
    (b, b1, b2)
}

/// Value, θ-gradient and θ-Hessian of a barrier term.
#[derive(Clone, Debug)]
pub struct BarrierEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub finite: bool,
}

impl BarrierEval {
    fn zero(n: usize) -> Self {
        BarrierEval { value: 0.0, gradient: DVector::zeros(n), hessian: DMatrix::zeros(n, n), finite: true }
    }

    fn infeasible(n: usize) -> Self {
        BarrierEval { finite: false, value: f64::INFINITY, ..BarrierEval::zero(n) }
    }
}

/// Bounding-volume hierarchy over a fixed point set.
#[derive(Clone, Debug)]
struct PointBvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

#[derive(Clone, Debug)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    /// Points `order[start..end]`.
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

const LEAF_SIZE: usize = 8;

impl PointBvh {
    fn new(points: &[Vec3]) -> Self {
        let mut bvh = PointBvh { nodes: Vec::new(), order: (0..points.len()).collect() };
        if !points.is_empty() {
            bvh.build(points, 0, points.len());
        }
        bvh
    }

    fn build(&mut self, points: &[Vec3], start: usize, end: usize) -> usize {
        let (mut lo, mut hi) = (points[self.order[start]], points[self.order[start]]);
        for &i in &self.order[start..end] {
            lo = lo.inf(&points[i]);
            hi = hi.sup(&points[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(BvhNode { lo, hi, start, end, children: None });
        if end - start > LEAF_SIZE {
            let axis = (hi - lo).imax();
            let mid = (start + end) / 2;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
            let l = self.build(points, start, mid);
            let r = self.build(points, mid, end);
            self.nodes[id].children = Some((l, r));
        }
        id
    }

    /// Indices of points inside the box `[lo, hi]`, ascending.
    fn query(&self, points: &[Vec3], lo: &Vec3, hi: &Vec3) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            if (0..3).any(|k| n.hi[k] < lo[k] || n.lo[k] > hi[k]) {
                continue;
            }
            match n.children {
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
                None => out.extend(
                    self.order[n.start..n.end]
                        .iter()
                        .copied()
                        .filter(|&i| (0..3).all(|k| points[i][k] >= lo[k] && points[i][k] <= hi[k])),
                ),
            }
        }
        out.sort_unstable();
        out
    }
}

/// Which second-order model [`ObjectBarrier`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianKind {
    /// `Σ γ b''(d) ∇d ∇dᵀ`: drops the curvature of the distance itself and is
    /// positive semidefinite by construction.
    GaussNewton,
    /// The full second derivative, including the witness and kinematic curvature.
    Exact,
}

/// Local distance data for one object point against its nearest link.
struct PointTerm {
    link: usize,
    b: (f64, f64, f64),
    /// `∂d/∂θ` over the link's dofs.
    grad: Vec<f64>,
    /// `∂²d/∂θ²` over the link's dofs, row-major.
    hess: Vec<f64>,
}

/// Object barrier with a prebuilt BVH over the object points.
#[derive(Clone, Debug)]
pub struct ObjectBarrier {
    points: Vec<Vec3>,
    bvh: PointBvh,
    config: BarrierConfig,
}

impl ObjectBarrier {
    pub fn new(points: Vec<Vec3>, config: BarrierConfig) -> Self {
        let bvh = PointBvh::new(&points);
        ObjectBarrier { points, bvh, config }
    }

    pub fn config(&self) -> BarrierConfig {
        self.config
    }

    /// `(point, link)` candidates whose distance may be below `d0`, grouped by
    /// point in ascending order.
    fn candidates(&self, model: &KinematicModel, derivs: &[LinkDerivatives], pruned: bool) -> Vec<(usize, Vec<usize>)> {
        let n = self.points.len();
        let mut per_point: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (l, d) in derivs.iter().enumerate() {
            if pruned {
                let verts = model.links()[l].vertices();
                let mut lo = d.pose.apply(&verts[0]);
                let mut hi = lo;
                for v in &verts[1..] {
                    let w = d.pose.apply(v);
                    lo = lo.inf(&w);
                    hi = hi.sup(&w);
                }
                let pad = Vec3::repeat(self.config.d0);
                for i in self.bvh.query(&self.points, &(lo - pad), &(hi + pad)) {
                    per_point[i].push(l);
                }
            } else {
                for p in per_point.iter_mut() {
                    p.push(l);
                }
            }
        }
        per_point.into_iter().enumerate().filter(|(_, v)| !v.is_empty()).collect()
    }

    fn term(&self, x: &Vec3, links: &[usize], model: &KinematicModel, derivs: &[LinkDerivatives], second: bool) -> Option<PointTerm> {
        let mut best: Option<(usize, f64)> = None;
        for &l in links {
            let local = derivs[l].pose.apply_inverse(x);
            let c = model.links()[l].hull.closest_point(&local);
            if best.is_none_or(|(_, d)| c.distance < d) {
                best = Some((l, c.distance));
            }
        }
        let (link, d) = best?;
        if d >= self.config.d0 {
            return None;
        }
        let b = local_barrier(d, self.config.d0);
        if d <= 0.0 {
            return Some(PointTerm { link, b, grad: Vec::new(), hess: Vec::new() });
        }
        let ld = &derivs[link];
        let hull = &model.links()[link].hull;
        let local = ld.pose.apply_inverse(x);
        let c = hull.closest_point(&local);
        let g = (local - c.point) / c.distance;
        let r = ld.pose.r;
        let rel = x - ld.pose.t;
        let m = ld.dofs.len();
        // ∂x^l/∂θ_a = (∂R_a)ᵀ(x − t) − Rᵀ ∂t_a
        let split = |p: &[f64; 12]| (Mat3::from_row_slice(&p[..9]), Vec3::new(p[9], p[10], p[11]));
        let parts: Vec<(Mat3, Vec3)> = ld.partials.iter().map(split).collect();
        let jx: Vec<Vec3> = parts.iter().map(|(dr, dt)| dr.tr_mul(&rel) - r.tr_mul(dt)).collect();
        let grad: Vec<f64> = jx.iter().map(|j| g.dot(j)).collect();
        let mut hess = Vec::new();
        if second {
            let hl = c.hessian(&local);
            hess = vec![0.0; m * m];
            for a in 0..m {
                for bb in a..m {
                    let (ddr, ddt) = split(&ld.hessian[a * m + bb]);
                    let second_x = ddr.tr_mul(&rel) - parts[a].0.tr_mul(&parts[bb].1) - parts[bb].0.tr_mul(&parts[a].1)
                        - r.tr_mul(&ddt);
                    let v = jx[a].dot(&(hl * jx[bb])) + g.dot(&second_x);
                    hess[a * m + bb] = v;
                    hess[bb * m + a] = v;
                }
            }
        }
        Some(PointTerm { link, b, grad, hess })
    }

    fn run(&self, model: &KinematicModel, cfg: &Configuration, kind: Option<HessianKind>, pruned: bool) -> Result<BarrierEval> {
        let derivatives = kind.is_some();
        let exact = kind == Some(HessianKind::Exact);
        let n = model.dof_count();
        let derivs = model.all_link_derivatives(cfg, derivatives)?;
        let cands = self.candidates(model, &derivs, pruned);
        let terms: Vec<Option<PointTerm>> =
            par::map(&cands, |(i, links)| self.term(&self.points[*i], links, model, &derivs, exact));
        let gamma = self.config.gamma;
        let mut out = BarrierEval::zero(n);
        for t in terms.iter().flatten() {
            if !t.b.0.is_finite() {
                return Ok(BarrierEval::infeasible(n));
            }
            out.value += gamma * t.b.0;
            if !derivatives {
                continue;
            }
            let dofs = &derivs[t.link].dofs;
            let m = dofs.len();
            for (a, &ga) in dofs.iter().enumerate() {
                out.gradient[ga] += gamma * t.b.1 * t.grad[a];
                for (bb, &gb) in dofs.iter().enumerate() {
                    let curvature = if exact { t.b.1 * t.hess[a * m + bb] } else { 0.0 };
                    out.hessian[(ga, gb)] += gamma * (t.b.2 * t.grad[a] * t.grad[bb] + curvature);
                }
            }
        }
        Ok(out)
    }

    /// Value, gradient and Gauss–Newton Hessian.
    pub fn evaluate(&self, model: &KinematicModel, cfg: &Configuration) -> Result<BarrierEval> {
        self.run(model, cfg, Some(HessianKind::GaussNewton), true)
    }

    pub fn evaluate_with(&self, model: &KinematicModel, cfg: &Configuration, kind: HessianKind) -> Result<BarrierEval> {
        self.run(model, cfg, Some(kind), true)
    }

    /// Value and feasibility only.
    pub fn value(&self, model: &KinematicModel, cfg: &Configuration) -> Result<f64> {
        Ok(self.run(model, cfg, None, true)?.value)
    }

    /// Same as [`evaluate_with`](Self::evaluate_with) but tests every point against every link.
    pub fn evaluate_unpruned(&self, model: &KinematicModel, cfg: &Configuration, kind: HessianKind) -> Result<BarrierEval> {
        self.run(model, cfg, Some(kind), false)
    }

    /// Smallest object-to-gripper distance (exhaustive).
    pub fn min_distance(&self, model: &KinematicModel, cfg: &Configuration) -> Result<f64> {
        let poses = model.forward_kinematics(cfg)?;
        let d = par::map(&self.points, |x| {
            model
                .links()
                .iter()
                .zip(&poses)
                .map(|(l, p)| point_to_convex_distance(x, &l.hull, p).distance)
                .fold(f64::INFINITY, f64::min)
        });
        Ok(d.into_iter().fold(f64::INFINITY, f64::min))
    }
}

/// One-shot object barrier evaluation.
pub fn object_barrier(points: &[Vec3], model: &KinematicModel, cfg: &Configuration, config: BarrierConfig) -> Result<BarrierEval> {
    ObjectBarrier::new(points.to_vec(), config).evaluate(model, cfg)
}

/// Plane `⟨n, y⟩ + n0` with `n = exp(rotation) e_z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparatingPlane {
    pub rotation: Vec3,
    pub offset: f64,
}

impl SeparatingPlane {
    pub fn from_normal(normal: &Vec3, offset: f64) -> Self {
        SeparatingPlane { rotation: so3::rotation_between(&Vec3::z(), &normal.normalize()), offset }
    }

    pub fn normal(&self) -> Vec3 {
        so3::exp(&self.rotation) * Vec3::z()
    }

    /// Size of the change to `other` in the 4-parameter representation.
    pub fn delta_norm(&self, other: &SeparatingPlane) -> f64 {
        let dr = so3::log(&(so3::exp(&other.rotation) * so3::exp(&self.rotation).transpose()));
        (dr.norm_squared() + (other.offset - self.offset).powi(2)).sqrt()
    }
}

/// Plane for the link pair `(p, q)`, `p < q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairPlane {
    pub p: usize,
    pub q: usize,
    pub plane: SeparatingPlane,
}

/// `−Σ ln(⟨n, y⟩ + n0) − Σ ln(−⟨n, y⟩ − n0)` over the two vertex sets, or
/// `+∞` when the plane does not strictly separate them.
pub fn pair_barrier(normal: &Vec3, offset: f64, vp: &[Vec3], vq: &[Vec3]) -> f64 {
    let mut s = 0.0;
    for y in vp {
        let a = normal.dot(y) + offset;
        if a <= 0.0 {
            return f64::INFINITY;
        }
        s -= a.ln();
    }
    for y in vq {
        let a = -normal.dot(y) - offset;
        if a <= 0.0 {
            return f64::INFINITY;
        }
        s -= a.ln();
    }
    s
}

fn world_vertices(model: &KinematicModel, derivs: &[LinkDerivatives], l: usize) -> Vec<Vec3> {
    model.links()[l].vertices().iter().map(|v| derivs[l].pose.apply(v)).collect()
}

fn check_planes(model: &KinematicModel, planes: &[PairPlane]) -> Result<()> {
    for (p, q) in model.non_adjacent_pairs() {
        if !planes.iter().any(|pp| pp.p == p && pp.q == q) {
            return Err(Error::invalid(format!("missing separating plane for links ({p}, {q})")));
        }
    }
    Ok(())
}

pub fn self_collision_barrier(
    model: &KinematicModel,
    cfg: &Configuration,
    planes: &[PairPlane],
    config: BarrierConfig,
) -> Result<BarrierEval> {
    self_collision_impl(model, cfg, planes, config, true)
}

/// Value and feasibility only.
pub fn self_collision_value(model: &KinematicModel, cfg: &Configuration, planes: &[PairPlane], config: BarrierConfig) -> Result<f64> {
    Ok(self_collision_impl(model, cfg, planes, config, false)?.value)
}

fn self_collision_impl(
    model: &KinematicModel,
    cfg: &Configuration,
    planes: &[PairPlane],
    config: BarrierConfig,
    derivatives: bool,
) -> Result<BarrierEval> {
    check_planes(model, planes)?;
    let n = model.dof_count();
    let derivs = model.all_link_derivatives(cfg, derivatives)?;
    let mut out = BarrierEval::zero(n);
    let gamma = config.gamma;
    for pp in planes {
        let normal = pp.plane.normal();
        for (link, sign) in [(pp.p, 1.0), (pp.q, -1.0)] {
            let ld = &derivs[link];
            let m = ld.dofs.len();
            for v in model.links()[link].vertices() {
                let y = ld.pose.apply(v);
                let a = sign * (normal.dot(&y) + pp.plane.offset);
                if a <= 0.0 {
                    return Ok(BarrierEval::infeasible(n));
                }
                out.value -= gamma * a.ln();
                if !derivatives {
                    continue;
                }
                // ∂a/∂θ and ∂²a/∂θ² over the link's dofs
                let da: Vec<f64> = ld.partials.iter().map(|p| sign * normal.dot(&point_derivative(p, v))).collect();
                for (i, &gi) in ld.dofs.iter().enumerate() {
                    out.gradient[gi] -= gamma * da[i] / a;
                    for (j, &gj) in ld.dofs.iter().enumerate() {
                        let dda = sign * normal.dot(&point_derivative(&ld.hessian[i * m + j], v));
                        out.hessian[(gi, gj)] += gamma * (da[i] * da[j] / (a * a) - dda / a);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn tangent_basis(n: &Vec3) -> [Vec3; 2] {
    let trial = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&trial).normalize();
    [e1, n.cross(&e1)]
}

/// Damped-Newton minimization of one pair's barrier over its plane. The normal
/// is moved by rotations `exp(ξ₁e₁ + ξ₂e₂)` in the plane's own tangent space.
pub fn update_separating_plane(
    p: usize,
    q: usize,
    model: &KinematicModel,
    cfg: &Configuration,
    initial: &SeparatingPlane,
    config: BarrierConfig,
) -> Result<SeparatingPlane> {
    let derivs = model.all_link_derivatives(cfg, false)?;
    let vp = world_vertices(model, &derivs, p);
    let vq = world_vertices(model, &derivs, q);
    let pair = |n: &Vec3, o: f64| config.gamma * pair_barrier(n, o, &vp, &vq);
    let start = pair(&initial.normal(), initial.offset);
    if !start.is_finite() {
        return Err(Error::invalid(format!("plane for links ({p}, {q}) does not separate them")));
    }
    let mut rot = so3::exp(&initial.rotation);
    let mut offset = initial.offset;
    let mut value = start;
    for _ in 0..50 {
        let n = rot * Vec3::z();
        let basis = tangent_basis(&n);
        let k = basis.map(|e| so3::skew(&e));
        let dn = [k[0] * n, k[1] * n];
        let ddn = [
            [k[0] * k[0] * n, 0.5 * (k[0] * k[1] + k[1] * k[0]) * n],
            [0.5 * (k[0] * k[1] + k[1] * k[0]) * n, k[1] * k[1] * n],
        ];
        let mut grad = nalgebra::Vector3::zeros();
        let mut hess = Matrix3::zeros();
        for (verts, sign) in [(&vp, 1.0), (&vq, -1.0)] {
            for y in verts.iter() {
                let a = sign * (n.dot(y) + offset);
                let da = nalgebra::Vector3::new(sign * dn[0].dot(y), sign * dn[1].dot(y), sign);
                let mut dda = Matrix3::zeros();
                for i in 0..2 {
                    for j in 0..2 {
                        dda[(i, j)] = sign * ddn[i][j].dot(y);
                    }
                }
                grad -= config.gamma * da / a;
                hess += config.gamma * (da * da.transpose() / (a * a) - dda / a);
            }
        }
        let eig = SymmetricEigen::new(hess);
        let floor = 1e-12 * eig.eigenvalues.amax().max(1.0);
        let clamped = eig.eigenvalues.map(|l| l.max(floor));
        let hpd = eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        let Some(step) = hpd.cholesky().map(|c| -c.solve(&grad)) else { break };
        if step.norm() < 1e-10 {
            break;
        }
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let s = step * t;
            let r_new = so3::exp(&(basis[0] * s[0] + basis[1] * s[1])) * rot;
            let o_new = offset + s[2];
            let v = pair(&(r_new * Vec3::z()), o_new);
            if v.is_finite() && v <= value + 1e-4 * t * slope {
                accepted = Some((r_new, o_new, v));
                break;
            }
            t *= 0.5;
        }
        let Some((r_new, o_new, v)) = accepted else { break };
        rot = r_new;
        offset = o_new;
        value = v;
        if (step * t).norm() < 1e-10 {
            break;
        }
    }
    let out = SeparatingPlane { rotation: so3::log(&rot), offset };
    let final_value = pair(&out.normal(), out.offset);
    if !(final_value <= start) {
        return Ok(*initial);
    }
    Ok(out)
}

/// Max-margin plane between two vertex sets via their closest points, with
/// `p` on the positive side. `None` when the hulls touch or overlap.
fn max_margin_plane(vp: &[Vec3], vq: &[Vec3]) -> Option<(Vec3, f64)> {
    let support = |set: &[Vec3], d: &Vec3| {
        *set.iter().max_by(|a, b| a.dot(d).total_cmp(&b.dot(d))).expect("non-empty vertex set")
    };
    let cp = vp.iter().sum::<Vec3>() / vp.len() as f64;
    let cq = vq.iter().sum::<Vec3>() / vq.len() as f64;
    let r = gjk::distance(|d| (support(vp, d), support(vq, &(-d))), cp - cq);
    if r.overlap || r.distance <= 0.0 {
        return None;
    }
    let n = (r.point_a - r.point_b) / r.distance;
    let n0 = -n.dot(&(0.5 * (r.point_a + r.point_b)));
    Some((n, n0))
}

/// Initial planes for every non-adjacent link pair.
pub fn init_separating_planes(model: &KinematicModel, cfg: &Configuration) -> Result<Vec<PairPlane>> {
    let derivs = model.all_link_derivatives(cfg, false)?;
    let mut out = Vec::new();
    for (p, q) in model.non_adjacent_pairs() {
        let vp = world_vertices(model, &derivs, p);
        let vq = world_vertices(model, &derivs, q);
        let cp = vp.iter().sum::<Vec3>() / vp.len() as f64;
        let cq = vq.iter().sum::<Vec3>() / vq.len() as f64;
        let mut chosen = None;
        if (cp - cq).norm() > 0.0 {
            let n = (cp - cq).normalize();
            let n0 = -n.dot(&(0.5 * (cp + cq)));
            if pair_barrier(&n, n0, &vp, &vq).is_finite() {
                chosen = Some((n, n0));
            }
        }
        let (n, n0) = match chosen.or_else(|| max_margin_plane(&vp, &vq)) {
            Some(v) => v,
            None => {
                let names = &model.links();
                return Err(Error::InfeasibleInit(format!(
                    "links '{}' ({p}) and '{}' ({q}) intersect; no separating plane exists",
                    names[p].name, names[q].name
                )));
            }
        };
        out.push(PairPlane { p, q, plane: SeparatingPlane::from_normal(&n, n0) });
    }
    Ok(out)
}
