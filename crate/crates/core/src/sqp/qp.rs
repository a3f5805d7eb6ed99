//! Dense primal active-set solver for the SQP subproblem
//!
//! ```text
//! min  ½ Δθᵀ H Δθ + ∇Lᵀ Δθ − ΔQ
//! s.t. Q + ΔQ ≤ G_d + ∇G_dᵀ Δθ     for every direction d
//!      lower ≤ Δθ ≤ upper
//! ```
//!
//! The starting point `(0, min_d (G_d − Q))` is always feasible, and at least
//! one direction constraint stays in the working set (their multipliers sum to
//! one), which pins `ΔQ` and keeps every KKT system nonsingular.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct QpInstance {
    /// `|θ| × |θ|`, positive definite.
    pub h: DMatrix<f64>,
    pub grad_l: DVector<f64>,
    /// `G_d` per direction.
    pub g: DVector<f64>,
    /// `∂G_d/∂θ`, `D × |θ|`.
    pub dg: DMatrix<f64>,
    pub q: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub dtheta: DVector<f64>,
    pub dq: f64,
    pub objective: f64,
    /// Multipliers of the direction constraints.
    pub lambda: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// `min ½zᵀPz + cᵀz  s.t.  Az ≥ b` over `z = (Δθ, ΔQ)`.
#[derive(Clone, Debug)]
pub struct GeneralQp {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl GeneralQp {
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.c.dot(z)
    }
}

impl QpInstance {
    pub fn dim(&self) -> usize {
        self.grad_l.len()
    }

    pub fn directions(&self) -> usize {
        self.g.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        let d = self.directions();
        if self.h.shape() != (n, n) || self.dg.shape() != (d, n) || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::invalid("QP dimensions are inconsistent"));
        }
        if d == 0 {
            return Err(Error::invalid("QP needs at least one direction constraint"));
        }
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| !(*l <= 0.0 && *u >= 0.0)) {
            return Err(Error::invalid("QP step bounds must contain zero"));
        }
        Ok(())
    }

    /// The same problem in `Az ≥ b` form, direction rows first, then lower
    /// bounds, then upper bounds.
    pub fn general_form(&self) -> GeneralQp {
        let n = self.dim();
        let d = self.directions();
        let mut p = DMatrix::zeros(n + 1, n + 1);
        p.view_mut((0, 0), (n, n)).copy_from(&self.h);
        let mut c = DVector::zeros(n + 1);
        c.rows_mut(0, n).copy_from(&self.grad_l);
        c[n] = -1.0;
        let m = d + 2 * n;
        let mut a = DMatrix::zeros(m, n + 1);
        let mut b = DVector::zeros(m);
        for k in 0..d {
            a.view_mut((k, 0), (1, n)).copy_from(&self.dg.row(k));
            a[(k, n)] = -1.0;
            b[k] = self.q - self.g[k];
        }
        for i in 0..n {
            a[(d + i, i)] = 1.0;
            b[d + i] = self.lower[i];
            a[(d + n + i, i)] = -1.0;
            b[d + n + i] = -self.upper[i];
        }
        GeneralQp { p, c, a, b }
    }

    pub fn objective(&self, dtheta: &DVector<f64>, dq: f64) -> f64 {
        0.5 * dtheta.dot(&(&self.h * dtheta)) + self.grad_l.dot(dtheta) - dq
    }
}

pub fn solve_qp(inst: &QpInstance) -> Result<QpSolution> {
    inst.validate()?;
    let n = inst.dim();
    let d = inst.directions();
    let qp = inst.general_form();
    let (m, nz) = qp.a.shape();
    let row_norm: Vec<f64> = (0..m).map(|i| qp.a.row(i).norm()).collect();

    let mut z = DVector::zeros(nz);
    let mut first = 0;
    for k in 1..d {
        if inst.g[k] < inst.g[first] {
            first = k;
        }
    }
    z[n] = inst.g[first] - inst.q;
    let mut working = vec![first];
    let mut lambda_w: Vec<f64> = Vec::new();
    let cap = 50 * (m + nz);

    for iter in 0..cap {
        let w = working.len();
        // normalized working rows; Z spans their null space
        let mut at = DMatrix::zeros(nz, nz);
        for (j, &i) in working.iter().enumerate() {
            at.column_mut(j).copy_from(&(qp.a.row(i).transpose() / row_norm[i]));
        }
        let svd = at.clone().svd(true, false);
        let u = svd.u.as_ref().expect("requested U");
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
        let mut order: Vec<usize> = (0..nz).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let zb = DMatrix::from_fn(nz, nz - rank, |r, c| u[(r, order[rank + c])]);

        let grad = &qp.p * &z + &qp.c;
        let reduced_grad = zb.transpose() * &grad;
        let stationary = reduced_grad.amax() <= 1e-13 * (1.0 + grad.amax());
        let p = if stationary {
            DVector::zeros(nz)
        } else {
            let reduced = zb.transpose() * &qp.p * &zb;
            let rhs = -&reduced_grad;
            let y = reduced
                .cholesky()
                .ok_or_else(|| Error::SolverFailure(format!("reduced Hessian not positive definite with {w} working constraints")))?
                .solve(&rhs);
            &zb * y
        };

        if stationary {
            // A_Wᵀ λ = ∇ in the least-squares sense, then undo the row scaling
            let mu = at
                .columns(0, w)
                .into_owned()
                .svd(true, true)
                .solve(&grad, 1e-12)
                .map_err(|e| Error::SolverFailure(format!("multiplier solve failed: {e}")))?;
            lambda_w = (0..w).map(|j| mu[j] / row_norm[working[j]]).collect();
            let lmax = lambda_w.iter().fold(1.0f64, |m, l| m.max(l.abs()));
            let drop = (0..w)
                .filter(|&j| lambda_w[j] < -1e-12 * lmax)
                .min_by(|&a, &b| lambda_w[a].total_cmp(&lambda_w[b]));
            match drop {
                None => return Ok(finish(inst, &qp, z, &working, &lambda_w, iter + 1)),
                Some(j) => {
                    working.remove(j);
                }
            }
            continue;
        }

        let mut step = 1.0;
        let mut block: Option<usize> = None;
        let pn = p.norm();
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let ap = qp.a.row(i).dot(&p.transpose());
            // rows (numerically) in the span of the working set never block
            if ap < -1e-9 * row_norm[i] * pn {
                let slack = (qp.a.row(i).dot(&z.transpose()) - qp.b[i]).max(0.0);
                let ratio = slack / -ap;
                if ratio < step {
                    step = ratio;
                    block = Some(i);
                }
            }
        }
        z += &p * step;
        if let Some(i) = block {
            working.push(i);
        }
    }
    Err(Error::SolverFailure(format!(
        "active-set QP did not converge in {cap} iterations ({} working constraints)",
        lambda_w.len()
    )))
}

fn finish(inst: &QpInstance, qp: &GeneralQp, z: DVector<f64>, working: &[usize], lambda_w: &[f64], iterations: usize) -> QpSolution {
    let n = inst.dim();
    let d = inst.directions();
    let (m, nz) = qp.a.shape();
    let mut lam = DVector::zeros(m);
    for (&i, &l) in working.iter().zip(lambda_w) {
        lam[i] = l.max(0.0);
    }
    let stat = &qp.p * &z + &qp.c - qp.a.transpose() * &lam;
    let slack = &qp.a * &z - &qp.b;
    let mut res = stat.amax();
    for i in 0..m {
        res = res.max((-slack[i]).max(0.0)).max((lam[i] * slack[i]).abs());
    }
    let dtheta = z.rows(0, n).into_owned();
    let dq = z[nz - 1];
    QpSolution {
        objective: inst.objective(&dtheta, dq),
        dtheta,
        dq,
        lambda: lam.rows(0, d).into_owned(),
        kkt_residual: res,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(h: f64, gl: f64, g: f64, dg: f64, q: f64) -> QpInstance {
        QpInstance {
            h: DMatrix::from_element(1, 1, h),
            grad_l: DVector::from_element(1, gl),
            g: DVector::from_element(1, g),
            dg: DMatrix::from_element(1, 1, dg),
            q,
            lower: DVector::from_element(1, -0.5),
            upper: DVector::from_element(1, 0.5),
        }
    }

    #[test]
    fn hand_kkt() {
        let s = solve_qp(&one_d(1.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(s.dtheta[0], 0.0);
        assert_eq!(s.dq, 0.0);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn unconstrained_step_with_tight_slack() {
        // ∇G = 0: Δθ = −H⁻¹∇L, ΔQ up to G − Q
        let s = solve_qp(&one_d(2.0, 0.4, 1.0, 0.0, 0.3)).unwrap();
        assert!((s.dtheta[0] + 0.2).abs() < 1e-14);
        assert!((s.dq - 0.7).abs() < 1e-14);
    }

    #[test]
    fn gradient_pull_hits_trust_bound() {
        // maximizing ΔQ = G'Δθ with weak curvature drives Δθ to the bound
        let s = solve_qp(&one_d(1e-6, 0.0, 0.0, 1.0, 0.0)).unwrap();
        assert!((s.dtheta[0] - 0.5).abs() < 1e-12);
        assert!((s.dq - 0.5).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-10);
    }
}
