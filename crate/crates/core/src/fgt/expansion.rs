//! Hermite (source-side) and Taylor (target-side) expansions of Gaussian sums.
//!
//! With `h = √α`, `u = (y − c)/h` and `t = (x − c)/h`:
//!
//! ```text
//! Σ_y S e^{-|x−y|²/α}            = Σ_n A_n h_n(t)
//! Σ_y S ∂/∂y_j e^{-|x−y|²/α}     = Σ_n B^j_n h_n(t) + t_j Σ_n C_n h_n(t)
//! A_n = Σ S u^n / n!     B^j_n = −(2/h) Σ S u^{n+e_j} / n!     C_n = (2/h) A_n
//! ```
//!
//! Coefficient tables hold `(p+1)³` entries indexed `(n1·P + n2)·P + n3`.

use crate::Vec3;

use super::hermite::hermite_functions_into;

fn table_len(order: usize) -> usize {
    (order + 1).pow(3)
}

/// Hermite coefficients of one source box for one channel.
#[derive(Clone, Debug)]
pub struct HermiteCoefficients {
    pub order: usize,
    pub center: Vec3,
    pub h: f64,
    pub a: Vec<f64>,
    /// Present when gradient channels were requested.
    pub b: Option<[Vec<f64>; 3]>,
    pub c: Vec<f64>,
    /// The constant `C_n / A_n`.
    pub c_scale: f64,
}

impl HermiteCoefficients {
    fn zeros(order: usize, center: Vec3, h: f64, gradients: bool, c_scale: f64) -> Self {
        let n = table_len(order);
        HermiteCoefficients {
            order,
            center,
            h,
            a: vec![0.0; n],
            b: gradients.then(|| std::array::from_fn(|_| vec![0.0; n])),
            c: vec![0.0; n],
            c_scale,
        }
    }

    /// `Σ_n A_n h_n((x − c)/h)`: the expansion evaluated directly at `x`.
    pub fn evaluate(&self, x: &Vec3) -> f64 {
        let p = self.order + 1;
        let t = (x - self.center) / self.h;
        let mut hs = [vec![0.0; p], vec![0.0; p], vec![0.0; p]];
        for i in 0..3 {
            hermite_functions_into(t[i], &mut hs[i]);
        }
        let mut s = 0.0;
        for n1 in 0..p {
            for n2 in 0..p {
                let w = hs[0][n1] * hs[1][n2];
                let row = &self.a[(n1 * p + n2) * p..(n1 * p + n2 + 1) * p];
                s += w * row.iter().zip(&hs[2]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        s
    }
}

/// `[u^k / k!]` for `k = 0..=order`.
fn scaled_powers(u: f64, order: usize, out: &mut [f64]) {
    out[0] = 1.0;
    for k in 1..=order {
        out[k] = out[k - 1] * u / k as f64;
    }
}

/// Hermite expansion of the given sources about `center`, one set of
/// coefficients per strength channel.
pub(crate) fn expand(
    center: Vec3,
    h: f64,
    points: &[Vec3],
    strengths: &[Vec<f64>],
    order: usize,
    gradients: bool,
    c_sign: f64,
) -> Vec<HermiteCoefficients> {
    let p = order + 1;
    let c_scale = c_sign * 2.0 / h;
    let mut out: Vec<HermiteCoefficients> = strengths
        .iter()
        .map(|_| HermiteCoefficients::zeros(order, center, h, gradients, c_scale))
        .collect();
    let mut px = vec![0.0; p];
    let mut py = vec![0.0; p];
    let mut pz = vec![0.0; p];
    let mut mono = vec![0.0; p * p * p];
    for (k, y) in points.iter().enumerate() {
        let u = (y - center) / h;
        scaled_powers(u.x, order, &mut px);
        scaled_powers(u.y, order, &mut py);
        scaled_powers(u.z, order, &mut pz);
        for n1 in 0..p {
            for n2 in 0..p {
                let w = px[n1] * py[n2];
                let base = (n1 * p + n2) * p;
                for n3 in 0..p {
                    mono[base + n3] = w * pz[n3];
                }
            }
        }
        let b_scale = -2.0 / h;
        for (ch, coef) in out.iter_mut().enumerate() {
            let s = strengths[ch][k];
            if s == 0.0 {
                continue;
            }
            for (a, m) in coef.a.iter_mut().zip(&mono) {
                *a += s * m;
            }
            if let Some(b) = coef.b.as_mut() {
                for j in 0..3 {
                    let f = b_scale * s * u[j];
                    for (bv, m) in b[j].iter_mut().zip(&mono) {
                        *bv += f * m;
                    }
                }
            }
        }
    }
    for coef in &mut out {
        coef.c = coef.a.iter().map(|a| coef.c_scale * a).collect();
        debug_assert!(coef.a.iter().zip(&coef.c).all(|(a, c)| *c == coef.c_scale * a));
    }
    out
}

/// Single-channel Hermite expansion with the standard constants.
pub fn m2m_expand(center: Vec3, h: f64, points: &[Vec3], strengths: &[f64], order: usize) -> HermiteCoefficients {
    expand(center, h, points, &[strengths.to_vec()], order, true, 1.0).remove(0)
}

/// Taylor coefficients about a target box center `b`, accumulated over any
/// number of source boxes:
///
/// ```text
/// value  = Σ_m E_m δ^m
/// grad_j = Σ_m (F^j_m + I^j_m) δ^m + δ_j Σ_m H_m δ^m,    δ = (x − b)/h
/// ```
#[derive(Clone, Debug)]
pub struct TaylorCoefficients {
    pub order: usize,
    pub center: Vec3,
    pub h: f64,
    pub e: Vec<f64>,
    pub f: Option<[Vec<f64>; 3]>,
    pub hh: Vec<f64>,
    pub i: Option<[Vec<f64>; 3]>,
}

impl TaylorCoefficients {
    pub fn zeros(order: usize, center: Vec3, h: f64, gradients: bool) -> Self {
        let n = table_len(order);
        TaylorCoefficients {
            order,
            center,
            h,
            e: vec![0.0; n],
            f: gradients.then(|| std::array::from_fn(|_| vec![0.0; n])),
            hh: vec![0.0; n],
            i: gradients.then(|| std::array::from_fn(|_| vec![0.0; n])),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.e.iter().all(|v| *v == 0.0)
            && self.f.iter().flatten().flatten().all(|v| *v == 0.0)
            && self.i.iter().flatten().flatten().all(|v| *v == 0.0)
    }
}

/// Per-axis translation matrices `M[m][n] = (−1)^m / m! · h_{n+m}(t0)`.
pub(crate) struct Translation {
    p: usize,
    m: [Vec<f64>; 3],
    t0: Vec3,
}

impl Translation {
    pub(crate) fn new(c: &Vec3, b: &Vec3, h: f64, order: usize) -> Self {
        let p = order + 1;
        let t0 = (b - c) / h;
        let mut hs = vec![0.0; 2 * p - 1];
        let m = std::array::from_fn(|axis| {
            hermite_functions_into(t0[axis], &mut hs);
            let mut mat = vec![0.0; p * p];
            let mut scale = 1.0;
            for mi in 0..p {
                if mi > 0 {
                    scale *= -1.0 / mi as f64;
                }
                for ni in 0..p {
                    mat[mi * p + ni] = scale * hs[ni + mi];
                }
            }
            mat
        });
        Translation { p, m, t0 }
    }

    /// With `T = M_x ⊗ M_y ⊗ M_z` applied by three one-axis contractions:
    /// `out += T src` and `outs[k] += s · T src` for each `(s, k)` in `scales`.
    fn apply(
        &self,
        src: &[f64],
        work: &mut [Vec<f64>; 2],
        out: &mut [f64],
        scales: &[(f64, usize)],
        outs: &mut [&mut [f64]],
    ) {
        let p = self.p;
        let pp = p * p;
        let [t1, t2] = work;
        t1.iter_mut().for_each(|v| *v = 0.0);
        t2.iter_mut().for_each(|v| *v = 0.0);
        for m1 in 0..p {
            let dst = &mut t1[m1 * pp..(m1 + 1) * pp];
            for n1 in 0..p {
                let c = self.m[0][m1 * p + n1];
                for (d, s) in dst.iter_mut().zip(&src[n1 * pp..(n1 + 1) * pp]) {
                    *d += c * s;
                }
            }
        }
        for m1 in 0..p {
            for m2 in 0..p {
                let base = (m1 * p + m2) * p;
                for n2 in 0..p {
                    let c = self.m[1][m2 * p + n2];
                    let srow = (m1 * p + n2) * p;
                    for k in 0..p {
                        t2[base + k] += c * t1[srow + k];
                    }
                }
            }
        }
        for row in 0..pp {
            let r = &t2[row * p..(row + 1) * p];
            for m3 in 0..p {
                let mz = &self.m[2][m3 * p..(m3 + 1) * p];
                let v: f64 = r.iter().zip(mz).map(|(a, b)| a * b).sum();
                out[row * p + m3] += v;
                for (s, k) in scales {
                    outs[*k][row * p + m3] += s * v;
                }
            }
        }
    }
}

/// Adds the Taylor image of `hermite` about `into.center` to `into`.
pub fn m2l_translate(hermite: &HermiteCoefficients, into: &mut TaylorCoefficients) {
    let tr = Translation::new(&hermite.center, &into.center, hermite.h, hermite.order);
    m2l_with(&tr, hermite, into);
}

pub(crate) fn m2l_with(tr: &Translation, hermite: &HermiteCoefficients, into: &mut TaylorCoefficients) {
    let n = table_len(hermite.order);
    let mut work = [vec![0.0; n], vec![0.0; n]];
    let hs = hermite.c_scale;
    match into.i.as_mut() {
        Some(i) => {
            let [i0, i1, i2] = i;
            let scales = [(hs, 0), (tr.t0.x * hs, 1), (tr.t0.y * hs, 2), (tr.t0.z * hs, 3)];
            let mut outs: [&mut [f64]; 4] = [&mut into.hh, i0, i1, i2];
            tr.apply(&hermite.a, &mut work, &mut into.e, &scales, &mut outs);
        }
        None => {
            let mut outs: [&mut [f64]; 1] = [&mut into.hh];
            tr.apply(&hermite.a, &mut work, &mut into.e, &[(hs, 0)], &mut outs);
        }
    }
    if let (Some(b), Some(f)) = (hermite.b.as_ref(), into.f.as_mut()) {
        for j in 0..3 {
            tr.apply(&b[j], &mut work, &mut f[j], &[], &mut []);
        }
    }
}

/// `[δ^m]` for `m = 0..=order`.
fn powers(d: f64, order: usize, out: &mut [f64]) {
    out[0] = 1.0;
    for k in 1..=order {
        out[k] = out[k - 1] * d;
    }
}

/// Value and the three gradient components at one target.
pub fn l2l_evaluate(taylor: &TaylorCoefficients, x: &Vec3) -> [f64; 4] {
    let p = taylor.order + 1;
    let d = (x - taylor.center) / taylor.h;
    let mut pw = [vec![0.0; p], vec![0.0; p], vec![0.0; p]];
    for i in 0..3 {
        powers(d[i], taylor.order, &mut pw[i]);
    }
    let poly = |t: &[f64]| -> f64 {
        let mut s = 0.0;
        for m1 in 0..p {
            let mut s2 = 0.0;
            for m2 in 0..p {
                let row = &t[(m1 * p + m2) * p..(m1 * p + m2 + 1) * p];
                s2 += pw[1][m2] * row.iter().zip(&pw[2]).map(|(a, b)| a * b).sum::<f64>();
            }
            s += pw[0][m1] * s2;
        }
        s
    };
    let value = poly(&taylor.e);
    let mut out = [value, 0.0, 0.0, 0.0];
    if let (Some(f), Some(i)) = (taylor.f.as_ref(), taylor.i.as_ref()) {
        let hv = poly(&taylor.hh);
        for j in 0..3 {
            out[1 + j] = poly(&f[j]) + poly(&i[j]) + d[j] * hv;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ORDER: usize = 12;

    #[test]
    fn single_source_at_center() {
        let c = Vec3::new(0.1, 0.2, 0.3);
        let e = m2m_expand(c, 0.1, &[c], &[1.0], ORDER);
        assert_eq!(e.a[0], 1.0);
        assert!(e.a[1..].iter().all(|v| *v == 0.0));
        assert!(e.c.iter().zip(&e.a).all(|(c, a)| *c == (2.0 / 0.1) * a));
        let mut t = TaylorCoefficients::zeros(ORDER, c, 0.1, true);
        m2l_translate(&e, &mut t);
        assert!((t.e[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_translate_to_zero() {
        let c = Vec3::zeros();
        let e = m2m_expand(c, 0.1, &[Vec3::new(0.05, 0.0, 0.0)], &[0.0], ORDER);
        let mut t = TaylorCoefficients::zeros(ORDER, Vec3::new(0.2, 0.0, 0.0), 0.1, true);
        m2l_translate(&e, &mut t);
        assert!(t.is_zero());
    }

    #[test]
    fn constant_term_only() {
        let mut t = TaylorCoefficients::zeros(ORDER, Vec3::zeros(), 0.1, false);
        t.e[0] = 2.5;
        assert_eq!(l2l_evaluate(&t, &Vec3::new(0.03, -0.04, 0.01))[0], 2.5);
    }

    #[test]
    fn translation_reproduces_the_hermite_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 0.05;
        let order = 20;
        let c = Vec3::zeros();
        let b = Vec3::new(2.0 * h, -2.0 * h, 0.0);
        let mut e = HermiteCoefficients::zeros(order, c, h, false, 2.0 / h);
        let p = order + 1;
        for n1 in 0..p {
            for n2 in 0..p {
                for n3 in 0..p {
                    let decay = 1.0 / ((1..=n1 + n2 + n3).map(|k| k as f64).product::<f64>());
                    e.a[(n1 * p + n2) * p + n3] = rng.random_range(-1.0..1.0) * decay;
                }
            }
        }
        let mut t = TaylorCoefficients::zeros(order, b, h, false);
        m2l_translate(&e, &mut t);
        for _ in 0..5 {
            let x = b + Vec3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h));
            let direct = e.evaluate(&x);
            let via = l2l_evaluate(&t, &x)[0];
            assert!((direct - via).abs() < 1e-6, "{direct} vs {via}");
        }
    }
}
