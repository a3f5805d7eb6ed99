//! Hermite functions `h_k(t) = H_k(t) e^{-t²}` and the truncation bound.

use crate::{Error, Result, Vec3};

/// `[h_0(t), …, h_max(t)]`, from the physicists' Hermite recurrence
/// `H_{k+1} = 2t H_k − 2k H_{k−1}` scaled by `e^{-t²}`.
pub fn hermite_functions(t: f64, max: usize) -> Vec<f64> {
    let mut out = vec![0.0; max + 1];
    hermite_functions_into(t, &mut out);
    out
}

pub(crate) fn hermite_functions_into(t: f64, out: &mut [f64]) {
    let g = (-t * t).exp();
    let (mut prev, mut cur) = (0.0, 1.0);
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = cur * g;
        let next = 2.0 * t * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
}

/// `h_n(r) = Π_i h_{n_i}(r_i)` for a multi-index `n`.
pub fn hermite_function(n: [usize; 3], r: &Vec3) -> f64 {
    (0..3).map(|i| hermite_functions(r[i], n[i])[n[i]]).product()
}

/// Cramér's constant: `|h_n(t)| ≤ K 2^{n/2} √(n!) e^{-t²/2}`.
const CRAMER: f64 = 1.086435;
/// Largest order accepted before reporting that `α` is too small for `ε`.
pub const MAX_ORDER: usize = 40;

/// `Σ_{n>p} 2^{n/2} / √(n!)`: the 1-D Hermite-series tail for `|u| ≤ 1`.
fn tail(p: usize) -> f64 {
    let mut s = 0.0;
    let mut ln_fact: f64 = (2..=p).map(|k| (k as f64).ln()).sum();
    for n in p + 1..p + 400 {
        ln_fact += (n as f64).ln();
        let term = (0.5 * n as f64 * std::f64::consts::LN_2 - 0.5 * ln_fact).exp();
        s += term;
        if term < 1e-300 {
            break;
        }
    }
    s
}

/// Bound on the absolute error per unit strength of a per-component truncated
/// expansion at order `p`, for sources and targets within half a box side of
/// their centers. Covers the Hermite and Taylor tails in each of the three
/// separable factors and the `2/√α`-scaled gradient channels.
pub fn truncation_bound(alpha: f64, p: usize) -> f64 {
    let r = CRAMER * tail(p);
    6.0 * r * (1.0 + r).powi(2) * (4.0 / alpha.sqrt()).max(1.0)
}

/// Smallest order `n0` whose truncation bound is at most `epsilon`.
pub fn truncation_order(alpha: f64, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    (1..=MAX_ORDER).find(|&p| truncation_bound(alpha, p) <= epsilon).ok_or_else(|| {
        Error::invalid(format!(
            "expansion order above {MAX_ORDER} needed for alpha = {alpha}, epsilon = {epsilon}"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_factorial(n: usize) -> f64 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    }

    #[test]
    fn low_orders() {
        assert_eq!(hermite_function([0, 0, 0], &Vec3::zeros()), 1.0);
        let v = hermite_function([1, 0, 0], &Vec3::new(1.0, 0.0, 0.0));
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cramer_bound_holds() {
        for i in 0..200 {
            let t = -6.0 + 12.0 * i as f64 / 199.0;
            let h = hermite_functions(t, 60);
            for (n, v) in h.iter().enumerate() {
                let bound = CRAMER * (0.5 * n as f64 * std::f64::consts::LN_2 + 0.5 * ln_factorial(n)).exp()
                    * (-t * t / 2.0).exp();
                assert!(v.abs() <= bound * (1.0 + 1e-12), "n={n} t={t}");
            }
        }
    }

    #[test]
    fn order_is_monotone_in_epsilon() {
        let a = 1e-3;
        let lo = truncation_order(a, 0.5).unwrap();
        let mid = truncation_order(a, 1e-6).unwrap();
        let hi = truncation_order(a, 1e-12).unwrap();
        assert!(lo <= mid && mid < hi);
        assert!(truncation_order(a, 1.5).is_err());
        assert!(truncation_order(a, 0.0).is_err());
    }
}
