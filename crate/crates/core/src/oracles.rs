//! Slow, independent references for checking the fast paths.
//!
//! Nothing here calls into the code it checks: kernel sums are plain double
//! loops, distances come from enumerating vertex triples, and the QP reference
//! is a primal-dual interior-point method.

use nalgebra::{DMatrix, DVector};

use crate::grasp::{FrictionCone, Wrench};
use crate::kinematics::{Configuration, KinematicModel};
use crate::sampling::PointSample;
use crate::{par, Error, Result, Vec3};

pub use crate::fgt::brute_force_sum;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdSpec {
    pub h: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        FdSpec { h: 1e-6 }
    }
}

/// Central differences per coordinate.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, at: &DVector<f64>, spec: FdSpec) -> Result<DVector<f64>> {
    if !(spec.h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut out = DVector::zeros(at.len());
    for i in 0..at.len() {
        let mut p = at.clone();
        p[i] += spec.h;
        let fp = f(&p);
        p[i] = at[i] - spec.h;
        let fm = f(&p);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!("function is not finite at probe along coordinate {i}")));
        }
        out[i] = (fp - fm) / (2.0 * spec.h);
    }
    Ok(out)
}

/// Central-difference Jacobian of a vector function, one column per coordinate.
pub fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, at: &DVector<f64>, spec: FdSpec) -> Result<DMatrix<f64>> {
    let mut cols = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let mut p = at.clone();
        p[i] += spec.h;
        let fp = f(&p);
        p[i] = at[i] - spec.h;
        let fm = f(&p);
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("function is not finite at probe along coordinate {i}")));
        }
        cols.push((fp - fm) / (2.0 * spec.h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Best of `⟨w, [f; x × f]⟩` over `f = 0` and `f = n + μ t_k` for `k_dirs`
/// evenly spaced unit tangents.
pub fn sampled_cone_max(x: &PointSample, w: &Wrench, cone: &FrictionCone, k_dirs: usize) -> f64 {
    let n = x.normal.normalize();
    let helper = if n.x.abs() < 0.6 { Vec3::x() } else { Vec3::z() };
    let e1 = (helper - n * n.dot(&helper)).normalize();
    let e2 = n.cross(&e1);
    let mut best = 0.0f64;
    for k in 0..k_dirs.max(8) {
        let a = std::f64::consts::TAU * k as f64 / k_dirs.max(8) as f64;
        let f = n + (e1 * a.cos() + e2 * a.sin()) * cone.mu;
        let torque = x.position.cross(&f);
        let v = w[0] * f.x + w[1] * f.y + w[2] * f.z + w[3] * torque.x + w[4] * torque.y + w[5] * torque.z;
        best = best.max(v);
    }
    best
}

#[derive(Clone, Debug)]
pub struct ReferenceQp {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// `min ½xᵀHx + gᵀx  s.t.  Ax ≥ b` by Mehrotra predictor-corrector.
pub fn reference_qp(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<ReferenceQp> {
    let n = g.len();
    let m = b.len();
    if h.shape() != (n, n) || a.shape() != (m, n) {
        return Err(Error::invalid("reference QP dimensions are inconsistent"));
    }
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + g.dot(x);
    if m == 0 {
        let x = -h.clone().lu().solve(g).ok_or_else(|| Error::Numerical("singular Hessian".into()))?;
        return Ok(ReferenceQp { objective: objective(&x), x, iterations: 1 });
    }
    let mut x = DVector::zeros(n);
    let mut s = (a * &x - b).map(|v| v.max(1.0));
    let mut lam = DVector::from_element(m, 1.0);
    let scale = 1.0 + g.amax().max(b.amax()).max(h.amax());

    for it in 0..300 {
        let rd = h * &x + g - a.transpose() * &lam;
        let rp = a * &x - &s - b;
        let mu = s.dot(&lam) / m as f64;
        if rd.amax() < 1e-12 * scale && rp.amax() < 1e-12 * scale && mu < 1e-14 * scale {
            return Ok(ReferenceQp { objective: objective(&x), x, iterations: it });
        }
        let d = lam.component_div(&s);
        let mut k = h.clone();
        for i in 0..m {
            let row = a.row(i);
            k += row.transpose() * row * d[i];
        }
        let lu = k.lu();
        // rc is the complementarity right-hand side; returns (dx, ds, dlam)
        let newton = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
            let rhs = -&rd - a.transpose() * d.component_mul(&rp) + a.transpose() * rc.component_div(&s);
            let dx = lu.solve(&rhs)?;
            let dlam = -d.component_mul(&(&rp + a * &dx)) + rc.component_div(&s);
            let ds = (rc - s.component_mul(&dlam)).component_div(&lam);
            Some((dx, ds, dlam))
        };
        let max_step = |v: &DVector<f64>, dv: &DVector<f64>| {
            v.iter().zip(dv.iter()).fold(1.0f64, |acc, (vi, di)| if *di < 0.0 { acc.min(-vi / di) } else { acc })
        };
        let fail = || Error::Numerical("interior-point Newton system is singular".into());
        let rc_aff = -s.component_mul(&lam);
        let (_, ds_a, dl_a) = newton(&rc_aff).ok_or_else(fail)?;
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&lam + &dl_a * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3);
        let rc = -s.component_mul(&lam) - ds_a.component_mul(&dl_a) + DVector::from_element(m, sigma * mu);
        let (dx, ds, dl) = newton(&rc).ok_or_else(fail)?;
        let step = (0.995 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        x += &dx * step;
        s += &ds * step;
        lam += &dl * step;
    }
    Err(Error::Numerical("interior-point method did not converge in 300 iterations".into()))
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = if ab.norm_squared() > 0.0 { ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

fn triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let edges = segment_distance(p, a, b).min(segment_distance(p, b, c)).min(segment_distance(p, c, a));
    let nrm = (b - a).cross(&(c - a));
    let area2 = nrm.norm_squared();
    if area2 == 0.0 {
        return edges;
    }
    // barycentric coordinates of the plane projection
    let q = p - nrm * ((p - a).dot(&nrm) / area2);
    let u = (b - q).cross(&(c - q)).dot(&nrm) / area2;
    let v = (c - q).cross(&(a - q)).dot(&nrm) / area2;
    let w = 1.0 - u - v;
    if u >= 0.0 && v >= 0.0 && w >= 0.0 {
        edges.min((p - q).norm())
    } else {
        edges
    }
}

/// Distance from `p` to the convex hull of `vertices`, zero inside, by
/// enumerating every vertex triple.
pub fn exhaustive_convex_distance(p: &Vec3, vertices: &[Vec3]) -> f64 {
    let n = vertices.len();
    let scale = vertices.iter().map(|v| v.norm()).fold(1.0f64, f64::max);
    let tol = 1e-10 * scale;
    let mut inside = true;
    let mut best = vertices.iter().map(|v| (p - v).norm()).fold(f64::INFINITY, f64::min);
    for i in 0..n {
        for j in i + 1..n {
            best = best.min(segment_distance(p, &vertices[i], &vertices[j]));
            for k in j + 1..n {
                let (a, b, c) = (&vertices[i], &vertices[j], &vertices[k]);
                best = best.min(triangle_distance(p, a, b, c));
                let nrm = (b - a).cross(&(c - a));
                let len = nrm.norm();
                if len <= 1e-12 * scale * scale {
                    continue;
                }
                let u = nrm / len;
                let side: Vec<f64> = vertices.iter().map(|v| u.dot(&(v - a))).collect();
                let below = side.iter().all(|&s| s <= tol);
                let above = side.iter().all(|&s| s >= -tol);
                let ps = u.dot(&(p - a));
                if (below && ps > tol) || (above && ps < -tol) {
                    inside = false;
                }
            }
        }
    }
    if inside { 0.0 } else { best }
}

/// Smallest distance from any point to any link of the posed gripper.
pub fn dense_min_distance(points: &[Vec3], model: &KinematicModel, cfg: &Configuration) -> Result<f64> {
    let poses = model.forward_kinematics(cfg)?;
    let worlds: Vec<Vec<Vec3>> = model
        .links()
        .iter()
        .zip(&poses)
        .map(|(l, p)| l.vertices().iter().map(|v| p.apply(v)).collect())
        .collect();
    let d = par::map(points, |x| {
        worlds
            .iter()
            .map(|w| exhaustive_convex_distance(x, w))
            .fold(f64::INFINITY, f64::min)
    });
    Ok(d.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_linear_and_quadratic() {
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x0 = DVector::from_vec(vec![0.3, 0.1, -0.7]);
        let g = fd_gradient(|x| a.dot(x), &x0, FdSpec::default()).unwrap();
        assert!((g - &a).amax() < 1e-9);
        let g = fd_gradient(|x| x.norm_squared(), &x0, FdSpec::default()).unwrap();
        assert!((g - &x0 * 2.0).amax() < 1e-8);
        assert!(fd_gradient(|x| if x[1] > 0.1 { f64::INFINITY } else { 0.0 }, &x0, FdSpec::default()).is_err());
    }

    #[test]
    fn qp_reference_basics() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let g = DVector::from_vec(vec![-2.0, 1.0]);
        let none = reference_qp(&h, &g, &DMatrix::zeros(0, 2), &DVector::zeros(0)).unwrap();
        assert!((none.x[0] - 1.0).abs() < 1e-12 && (none.x[1] + 1.0).abs() < 1e-12);
        // x ≥ 2 projects the 1-D minimizer 1 onto the bound
        let one = reference_qp(
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, -1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert!((one.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn exhaustive_distance_cube() {
        let v: Vec<Vec3> = (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect();
        assert_eq!(exhaustive_convex_distance(&Vec3::repeat(0.5), &v), 0.0);
        assert!((exhaustive_convex_distance(&Vec3::new(2.0, 0.5, 0.5), &v) - 1.0).abs() < 1e-14);
        assert!((exhaustive_convex_distance(&Vec3::new(2.0, 2.0, 0.5), &v) - 2f64.sqrt()).abs() < 1e-14);
    }
}
