//! Rotation helpers: the exponential map with its first and second derivatives.
//!
//! `exp(ω) = I + A(s)·[ω]× + B(s)·[ω]×²` with `s = |ω|²`,
//! `A = sin θ / θ` and `B = (1 - cos θ) / θ²`. Derivatives of `A` and `B` are taken
//! with respect to `s`, which keeps every expression smooth through `ω = 0`.

use nalgebra::{Rotation3, Unit};

use crate::{Mat3, Vec3};

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

const SERIES_LIMIT: f64 = 1.0;
const SERIES_TERMS: usize = 16;

/// `(A, A', A'', B, B', B'')` as functions of `s = θ²`.
fn coefficients(s: f64) -> [f64; 6] {
    if s < SERIES_LIMIT {
        // A = Σ (-s)^k / (2k+1)!,  B = Σ (-s)^k / (2k+2)!
        let mut out = [0.0; 6];
        let mut fact_a = 1.0; // (2k+1)!
        let mut fact_b = 2.0; // (2k+2)!
        for k in 0..SERIES_TERMS {
            let kf = k as f64;
            if k > 0 {
                fact_a *= (2.0 * kf) * (2.0 * kf + 1.0);
                fact_b *= (2.0 * kf + 1.0) * (2.0 * kf + 2.0);
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let p0 = s.powi(k as i32);
            out[0] += sign * p0 / fact_a;
            out[3] += sign * p0 / fact_b;
            if k >= 1 {
                let p1 = kf * s.powi(k as i32 - 1);
                out[1] += sign * p1 / fact_a;
                out[4] += sign * p1 / fact_b;
            }
            if k >= 2 {
                let p2 = kf * (kf - 1.0) * s.powi(k as i32 - 2);
                out[2] += sign * p2 / fact_a;
                out[5] += sign * p2 / fact_b;
            }
        }
        out
    } else {
        let t = s.sqrt();
        let (sn, cs) = t.sin_cos();
        let t2 = s;
        let t3 = t2 * t;
        let t4 = t2 * t2;
        let t5 = t4 * t;
        let t6 = t4 * t2;
        [
            sn / t,
            (t * cs - sn) / (2.0 * t3),
            (-t2 * sn - 3.0 * t * cs + 3.0 * sn) / (4.0 * t5),
            (1.0 - cs) / t2,
            (t * sn - 2.0 + 2.0 * cs) / (2.0 * t4),
            (t2 * cs - 5.0 * t * sn + 8.0 - 8.0 * cs) / (4.0 * t6),
        ]
    }
}

/// Rotation matrix of the rotation vector `w`.
pub fn exp(w: &Vec3) -> Mat3 {
    let c = coefficients(w.norm_squared());
    let k = skew(w);
    Mat3::identity() + k * c[0] + k * k * c[3]
}

/// `exp(w)` together with `∂exp/∂w_k` for `k = 0..3`.
pub fn exp_with_derivatives(w: &Vec3) -> (Mat3, [Mat3; 3]) {
    let c = coefficients(w.norm_squared());
    let k = skew(w);
    let k2 = k * k;
    let r = Mat3::identity() + k * c[0] + k2 * c[3];
    let d = std::array::from_fn(|i| {
        let e = skew(&Vec3::ith(i, 1.0));
        let a_i = 2.0 * c[1] * w[i];
        let b_i = 2.0 * c[4] * w[i];
        k * a_i + e * c[0] + k2 * b_i + (e * k + k * e) * c[3]
    });
    (r, d)
}

/// Second derivatives `∂²exp/∂w_i∂w_j` (symmetric in `i, j`).
pub fn exp_second_derivatives(w: &Vec3) -> [[Mat3; 3]; 3] {
    let c = coefficients(w.norm_squared());
    let k = skew(w);
    let k2 = k * k;
    let e: [Mat3; 3] = std::array::from_fn(|i| skew(&Vec3::ith(i, 1.0)));
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            let a_i = 2.0 * c[1] * w[i];
            let a_j = 2.0 * c[1] * w[j];
            let b_i = 2.0 * c[4] * w[i];
            let b_j = 2.0 * c[4] * w[j];
            let a_ij = 4.0 * c[2] * w[i] * w[j] + 2.0 * c[1] * delta;
            let b_ij = 4.0 * c[5] * w[i] * w[j] + 2.0 * c[4] * delta;
            k * a_ij
                + e[j] * a_i
                + e[i] * a_j
                + k2 * b_ij
                + (e[j] * k + k * e[j]) * b_i
                + (e[i] * k + k * e[i]) * b_j
                + (e[i] * e[j] + e[j] * e[i]) * c[3]
        })
    })
}

/// Rotation by `angle` about the unit `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let k = skew(axis);
    let (s, c) = angle.sin_cos();
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

/// Rotation vector of a rotation matrix (inverse of [`exp`]).
pub fn log(r: &Mat3) -> Vec3 {
    Rotation3::from_matrix(r).scaled_axis()
}

/// A rotation vector `w` with `exp(w) * from == to` for unit vectors.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> Vec3 {
    match Rotation3::rotation_between(from, to) {
        Some(r) => r.scaled_axis(),
        None => {
            // antiparallel: rotate by π about any axis orthogonal to `from`
            let trial = if from.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let axis = Unit::new_normalize(from.cross(&trial));
            axis.into_inner() * std::f64::consts::PI
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        let lo = coefficients(SERIES_LIMIT * (1.0 - 1e-12));
        let hi = coefficients(SERIES_LIMIT * (1.0 + 1e-12));
        for (a, b) in lo.iter().zip(hi.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn exp_matches_nalgebra() {
        for w in [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1e-5, -2e-5, 3e-6),
            Vec3::new(0.3, -0.2, 0.5),
            Vec3::new(1.5, 2.0, -0.7),
        ] {
            let ours = exp(&w);
            let theirs = Rotation3::new(w).into_inner();
            assert_relative_eq!(ours, theirs, epsilon = 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for w in [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.02, -0.01, 0.03),
            Vec3::new(0.7, -0.4, 1.1),
            Vec3::new(2.0, 1.0, -1.5),
        ] {
            let (_, d) = exp_with_derivatives(&w);
            let dd = exp_second_derivatives(&w);
            for i in 0..3 {
                let mut wp = w;
                wp[i] += h;
                let mut wm = w;
                wm[i] -= h;
                let fd = (exp(&wp) - exp(&wm)) / (2.0 * h);
                assert_relative_eq!(d[i], fd, epsilon = 1e-8);
                let (_, dp) = exp_with_derivatives(&wp);
                let (_, dm) = exp_with_derivatives(&wm);
                for j in 0..3 {
                    let fd2 = (dp[j] - dm[j]) / (2.0 * h);
                    assert_relative_eq!(dd[i][j], fd2, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn log_inverts_exp() {
        let w = Vec3::new(0.4, -1.2, 0.9);
        assert_relative_eq!(log(&exp(&w)), w, epsilon = 1e-12);
    }

    #[test]
    fn rotation_between_handles_antiparallel() {
        let e = Vec3::z();
        for to in [Vec3::x(), -Vec3::z(), Vec3::new(1.0, 2.0, -3.0).normalize()] {
            let w = rotation_between(&e, &to);
            assert_relative_eq!(exp(&w) * e, to, epsilon = 1e-12);
        }
    }
}
