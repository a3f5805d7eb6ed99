//! Articulated grippers made of convex links.
//!
//! Link 0 is the root and carries a free 6-DOF joint: three translation
//! parameters followed by an exponential-map rotation vector. Every other link
//! hangs off a revolute or prismatic joint with one parameter each, numbered in
//! link order after the six root parameters.
//!
//! Transform derivatives are reported as 12-vectors: the nine entries of `R`
//! in row-major order followed by the three entries of `t`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix4};
use serde::{Deserialize, Serialize};

use crate::hull::ConvexHull;
use crate::{so3, Error, Mat3, Result, Vec3};

/// Rigid transform `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub r: Mat3,
    pub t: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose { r: Mat3::identity(), t: Vec3::zeros() }
    }

    pub fn new(r: Mat3, t: Vec3) -> Self {
        Pose { r, t }
    }

    pub fn translation(t: Vec3) -> Self {
        Pose { r: Mat3::identity(), t }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.r * p + self.t
    }

    /// `R^T (p - t)`.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.r.tr_mul(&(p - self.t))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { r: self.r * other.r, t: self.r * other.t + self.t }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.r.transpose();
        Pose { r: rt, t: -(rt * self.t) }
    }

    /// `[R row-major; t]`.
    pub fn entries(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j] = self.r[(i, j)];
            }
            out[9 + i] = self.t[i];
        }
        out
    }

    fn to_homogeneous(self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }
}

fn entries_of(m: &Matrix4<f64>) -> [f64; 12] {
    let mut out = [0.0; 12];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = m[(i, j)];
        }
        out[9 + i] = m[(i, 3)];
    }
    out
}

/// Derivative of the point `R p + t` given the 12-entry derivative of `(R, t)`.
pub fn point_derivative(d: &[f64], p: &Vec3) -> Vec3 {
    Vec3::new(
        d[0] * p.x + d[1] * p.y + d[2] * p.z + d[9],
        d[3] * p.x + d[4] * p.y + d[5] * p.z + d[10],
        d[6] * p.x + d[7] * p.y + d[8] * p.z + d[11],
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
    Free6,
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub kind: JointType,
    pub axis: Vec3,
    pub origin: Pose,
    /// Optional `[lower, upper]` range for 1-DOF joints.
    pub limits: Option<[f64; 2]>,
}

#[derive(Clone, Debug)]
pub struct ConvexLink {
    pub name: String,
    pub parent: Option<usize>,
    pub joint: Joint,
    pub hull: ConvexHull,
}

impl ConvexLink {
    pub fn vertices(&self) -> &[Vec3] {
        self.hull.vertices()
    }
}

#[derive(Clone, Debug)]
pub struct KinematicModel {
    links: Vec<ConvexLink>,
    /// First parameter index of each link's joint.
    dof_start: Vec<usize>,
    /// Root-to-link chains, root first.
    paths: Vec<Vec<usize>>,
    dof_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub theta: DVector<f64>,
}

impl Configuration {
    pub fn new(theta: DVector<f64>) -> Self {
        Configuration { theta }
    }

    pub fn zeros(n: usize) -> Self {
        Configuration { theta: DVector::zeros(n) }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Configuration { theta: DVector::from_column_slice(v) }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

impl KinematicModel {
    pub fn new(links: Vec<ConvexLink>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::invalid("kinematic model has no links"));
        }
        let mut dof_start = Vec::with_capacity(links.len());
        let mut paths: Vec<Vec<usize>> = Vec::with_capacity(links.len());
        let mut dof = 0;
        for (i, link) in links.iter().enumerate() {
            let is_root = i == 0;
            match (is_root, link.parent, link.joint.kind) {
                (true, None, JointType::Free6) => {}
                (true, _, _) => {
                    return Err(Error::invalid("link 0 must be the root with a free6 joint"));
                }
                (false, Some(p), kind) if p < i && kind != JointType::Free6 => {}
                (false, Some(p), _) if p >= i => {
                    return Err(Error::invalid(format!(
                        "link {i} has parent {p}; parents must precede children"
                    )));
                }
                (false, None, _) => {
                    return Err(Error::invalid(format!("link {i} has no parent; only link 0 may be a root")));
                }
                (false, _, _) => {
                    return Err(Error::invalid(format!("link {i}: free6 joints are only allowed at the root")));
                }
            }
            if (link.joint.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("link {i}: joint axis must have unit norm")));
            }
            dof_start.push(dof);
            dof += if is_root { 6 } else { 1 };
            let mut path = match link.parent {
                Some(p) => paths[p].clone(),
                None => Vec::new(),
            };
            path.push(i);
            paths.push(path);
        }
        Ok(KinematicModel { links, dof_start, paths, dof_count: dof })
    }

    pub fn links(&self) -> &[ConvexLink] {
        &self.links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn dof_count(&self) -> usize {
        self.dof_count
    }

    /// Parameter indices that move `link`, in ascending order.
    pub fn path_dofs(&self, link: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &l in &self.paths[link] {
            let start = self.dof_start[l];
            let n = if l == 0 { 6 } else { 1 };
            out.extend(start..start + n);
        }
        out
    }

    /// Pairs `p < q` that are not parent and child.
    pub fn non_adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for q in 0..self.links.len() {
            for p in 0..q {
                if self.links[q].parent != Some(p) {
                    out.push((p, q));
                }
            }
        }
        out
    }

    /// Range used for initialization: the joint limits when given.
    pub fn joint_limits(&self, link: usize) -> Option<[f64; 2]> {
        self.links[link].joint.limits
    }

    pub fn dof_of_link(&self, link: usize) -> usize {
        self.dof_start[link]
    }

    fn check(&self, cfg: &Configuration) -> Result<()> {
        if cfg.len() != self.dof_count {
            return Err(Error::invalid(format!(
                "configuration has {} entries, model expects {}",
                cfg.len(),
                self.dof_count
            )));
        }
        if cfg.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("configuration contains non-finite entries"));
        }
        Ok(())
    }

    /// Local joint transform of `link` with its derivatives in the joint's own
    /// parameters (6 for the root, 1 otherwise).
    fn local_factor(&self, link: usize, cfg: &Configuration, second: bool) -> Factor {
        let j = &self.links[link].joint;
        let s = self.dof_start[link];
        match j.kind {
            JointType::Free6 => {
                let p = Vec3::new(cfg.theta[s], cfg.theta[s + 1], cfg.theta[s + 2]);
                let w = Vec3::new(cfg.theta[s + 3], cfg.theta[s + 4], cfg.theta[s + 5]);
                let (r, dr) = so3::exp_with_derivatives(&w);
                let value = Pose::new(r * j.origin.r, r * j.origin.t + p).to_homogeneous();
                let mut d = Vec::with_capacity(6);
                for k in 0..3 {
                    let mut m = Matrix4::zeros();
                    m[(k, 3)] = 1.0;
                    d.push(m);
                }
                for drk in &dr {
                    d.push(derivative_block(&(drk * j.origin.r), &(drk * j.origin.t)));
                }
                let mut dd = vec![Matrix4::zeros(); 36];
                if second {
                    let h = so3::exp_second_derivatives(&w);
                    for a in 0..3 {
                        for b in 0..3 {
                            dd[(3 + a) * 6 + 3 + b] =
                                derivative_block(&(h[a][b] * j.origin.r), &(h[a][b] * j.origin.t));
                        }
                    }
                }
                Factor { value, d, dd }
            }
            JointType::Revolute => {
                let q = cfg.theta[s];
                let rot = so3::axis_angle(&j.axis, q);
                let k = so3::skew(&j.axis);
                let value = Pose::new(j.origin.r * rot, j.origin.t).to_homogeneous();
                let d = vec![derivative_block(&(j.origin.r * k * rot), &Vec3::zeros())];
                let dd = vec![derivative_block(&(j.origin.r * k * k * rot), &Vec3::zeros())];
                Factor { value, d, dd }
            }
            JointType::Prismatic => {
                let q = cfg.theta[s];
                let dir = j.origin.r * j.axis;
                let value = Pose::new(j.origin.r, j.origin.t + dir * q).to_homogeneous();
                let d = vec![derivative_block(&Mat3::zeros(), &dir)];
                Factor { value, d, dd: vec![Matrix4::zeros()] }
            }
        }
    }

    pub fn forward_kinematics(&self, cfg: &Configuration) -> Result<Vec<Pose>> {
        self.check(cfg)?;
        let mut out: Vec<Pose> = Vec::with_capacity(self.links.len());
        for l in 0..self.links.len() {
            let local = self.local_factor(l, cfg, false).value;
            let local = Pose::new(local.fixed_view::<3, 3>(0, 0).into(), local.fixed_view::<3, 1>(0, 3).into());
            let pose = match self.links[l].parent {
                Some(p) => out[p].compose(&local),
                None => local,
            };
            out.push(pose);
        }
        Ok(out)
    }

    /// `∂(R_l, t_l)/∂θ` as a 12 × |θ| matrix.
    pub fn kinematic_jacobian(&self, cfg: &Configuration, link: usize) -> Result<DMatrix<f64>> {
        if link >= self.links.len() {
            return Err(Error::invalid(format!(
                "link index {link} out of range (model has {} links)",
                self.links.len()
            )));
        }
        self.check(cfg)?;
        Ok(self.link_derivatives(cfg, link, false).jacobian)
    }

    /// Pose, Jacobian and (optionally) second derivatives of every link.
    pub fn all_link_derivatives(&self, cfg: &Configuration, second: bool) -> Result<Vec<LinkDerivatives>> {
        self.check(cfg)?;
        Ok((0..self.links.len()).map(|l| self.link_derivatives(cfg, l, second)).collect())
    }

    fn link_derivatives(&self, cfg: &Configuration, link: usize, second: bool) -> LinkDerivatives {
        let path = &self.paths[link];
        let factors: Vec<Factor> = path.iter().map(|&l| self.local_factor(l, cfg, second)).collect();
        let k = factors.len();
        // prefix[i] = F_0 ... F_{i-1}, suffix[i] = F_i ... F_{k-1}
        let mut prefix = vec![Matrix4::identity(); k + 1];
        for i in 0..k {
            prefix[i + 1] = prefix[i] * factors[i].value;
        }
        let mut suffix = vec![Matrix4::identity(); k + 1];
        for i in (0..k).rev() {
            suffix[i] = factors[i].value * suffix[i + 1];
        }
        let total = prefix[k];
        let pose = Pose::new(total.fixed_view::<3, 3>(0, 0).into(), total.fixed_view::<3, 1>(0, 3).into());

        // (factor index, local parameter index, global parameter index)
        let mut params = Vec::new();
        for (fi, &l) in path.iter().enumerate() {
            for a in 0..factors[fi].d.len() {
                params.push((fi, a, self.dof_start[l] + a));
            }
        }

        let n = self.dof_count;
        let mut jacobian = DMatrix::zeros(12, n);
        let mut partials = Vec::with_capacity(params.len());
        for &(fi, a, g) in &params {
            let m = prefix[fi] * factors[fi].d[a] * suffix[fi + 1];
            let e = entries_of(&m);
            for r in 0..12 {
                jacobian[(r, g)] = e[r];
            }
            partials.push(e);
        }

        let mut hessian = Vec::new();
        if second {
            let m = params.len();
            hessian = vec![[0.0; 12]; m * m];
            for (ia, &(fa, a, _)) in params.iter().enumerate() {
                for (ib, &(fb, b, _)) in params.iter().enumerate().skip(ia) {
                    let mat = if fa == fb {
                        let np = factors[fa].d.len();
                        prefix[fa] * factors[fa].dd[a * np + b] * suffix[fa + 1]
                    } else {
                        let mut mid = Matrix4::identity();
                        for f in &factors[fa + 1..fb] {
                            mid *= f.value;
                        }
                        prefix[fa] * factors[fa].d[a] * mid * factors[fb].d[b] * suffix[fb + 1]
                    };
                    let e = entries_of(&mat);
                    hessian[ia * m + ib] = e;
                    hessian[ib * m + ia] = e;
                }
            }
        }

        LinkDerivatives {
            pose,
            jacobian,
            dofs: params.iter().map(|p| p.2).collect(),
            partials,
            hessian,
        }
    }

    pub fn from_json_str(text: &str, path: &Path) -> Result<Self> {
        let spec: GripperSpec = serde_json::from_str(text).map_err(|e| {
            Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let mut links = Vec::with_capacity(spec.links.len());
        if spec.links.is_empty() {
            return Err(Error::parse(path, "links", "at least one link is required"));
        }
        for (i, l) in spec.links.iter().enumerate() {
            let field = |f: &str| format!("links[{i}].{f}");
            let axis = match l.joint.axis {
                Some(a) => Vec3::from(a),
                None if l.joint.kind == JointType::Free6 => Vec3::z(),
                None => return Err(Error::parse(path, field("joint.axis"), "missing axis")),
            };
            let n = axis.norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::parse(path, field("joint.axis"), format!("axis must have unit norm, got {n}")));
            }
            let origin = match &l.joint.origin {
                None => Pose::identity(),
                Some(o) => {
                    let r = Mat3::from_row_slice(&o.r);
                    if (r.transpose() * r - Mat3::identity()).amax() > 1e-6 || r.determinant() <= 0.0 {
                        return Err(Error::parse(path, field("joint.origin.R"), "not a proper rotation matrix"));
                    }
                    Pose::new(r, Vec3::from(o.t))
                }
            };
            if let Some([lo, hi]) = l.joint.limits {
                if !(lo <= hi) {
                    return Err(Error::parse(path, field("joint.limits"), "lower limit exceeds upper limit"));
                }
            }
            let hull = ConvexHull::new(l.vertices.iter().map(|v| Vec3::from(*v)).collect())
                .map_err(|e| Error::parse(path, field("vertices"), e.to_string()))?;
            links.push(ConvexLink {
                name: l.name.clone().unwrap_or_else(|| format!("link{i}")),
                parent: l.parent,
                joint: Joint { kind: l.joint.kind, axis: axis / n, origin, limits: l.joint.limits },
                hull,
            });
        }
        KinematicModel::new(links).map_err(|e| Error::parse(path, "links", e.to_string()))
    }

    /// Serializes the model in the JSON format read by [`from_json_str`](Self::from_json_str).
    pub fn to_json(&self) -> String {
        let spec = GripperSpec {
            links: self
                .links
                .iter()
                .map(|l| LinkSpec {
                    name: Some(l.name.clone()),
                    parent: l.parent,
                    joint: JointSpec {
                        kind: l.joint.kind,
                        axis: Some(l.joint.axis.into()),
                        origin: Some(OriginSpec {
                            r: std::array::from_fn(|k| l.joint.origin.r[(k / 3, k % 3)]),
                            t: l.joint.origin.t.into(),
                        }),
                        limits: l.joint.limits,
                    },
                    vertices: l.vertices().iter().map(|v| (*v).into()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&spec).expect("model serializes")
    }
}

/// Derivatives of one link transform.
#[derive(Clone, Debug)]
pub struct LinkDerivatives {
    pub pose: Pose,
    /// 12 × |θ|; zero outside `dofs`.
    pub jacobian: DMatrix<f64>,
    /// Global parameter indices that move this link.
    pub dofs: Vec<usize>,
    /// `∂(R,t)/∂θ_{dofs[a]}` as 12-vectors.
    pub partials: Vec<[f64; 12]>,
    /// `∂²(R,t)/∂θ_{dofs[a]}∂θ_{dofs[b]}` at `a * dofs.len() + b`; empty unless
    /// second derivatives were requested.
    pub hessian: Vec<[f64; 12]>,
}

struct Factor {
    value: Matrix4<f64>,
    d: Vec<Matrix4<f64>>,
    /// Row-major `d.len() × d.len()` second derivatives.
    dd: Vec<Matrix4<f64>>,
}

fn derivative_block(r: &Mat3, t: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GripperSpec {
    links: Vec<LinkSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSpec {
    #[serde(default)]
    name: Option<String>,
    parent: Option<usize>,
    joint: JointSpec,
    vertices: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    #[serde(rename = "type")]
    kind: JointType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<OriginSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limits: Option<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OriginSpec {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}
