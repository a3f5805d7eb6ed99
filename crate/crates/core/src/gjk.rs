//! Gilbert–Johnson–Keerthi distance between convex sets given by support maps.
//!
//! The set is the Minkowski difference `A - B`; the support map returns the pair
//! of extreme points `(a, b)` so that witness points on both sets can be
//! recovered from the final simplex weights.

use crate::Vec3;

const MAX_ITERS: usize = 128;
const REL_TOL: f64 = 1e-13;

#[derive(Clone, Debug)]
pub struct GjkResult {
    pub distance: f64,
    /// Closest point on `A`.
    pub point_a: Vec3,
    /// Closest point on `B`.
    pub point_b: Vec3,
    /// True when the sets overlap (distance 0).
    pub overlap: bool,
}

#[derive(Clone, Copy)]
struct Vertex {
    a: Vec3,
    b: Vec3,
    w: Vec3,
}

/// Distance between convex sets `A` and `B`. `support(d)` must return
/// `(argmax_{a∈A} ⟨a,d⟩, argmin_{b∈B} ⟨b,d⟩)`.
pub fn distance<F>(support: F, initial_dir: Vec3) -> GjkResult
where
    F: Fn(&Vec3) -> (Vec3, Vec3),
{
    let dir = if initial_dir.norm_squared() > 0.0 { initial_dir } else { Vec3::x() };
    let (a, b) = support(&(-dir));
    let mut simplex = vec![Vertex { a, b, w: a - b }];
    let mut weights = vec![1.0];
    let mut v = simplex[0].w;
    let mut scale = v.norm().max(1e-300);

    for _ in 0..MAX_ITERS {
        let vv = v.norm_squared();
        if vv <= (1e-14 * scale).powi(2) {
            return finish(&simplex, &weights, true);
        }
        let (a, b) = support(&(-v));
        let w = a - b;
        scale = scale.max(w.norm());
        // no further progress along -v
        if vv - v.dot(&w) <= REL_TOL * vv.max(scale * scale * 1e-20) {
            break;
        }
        if simplex.iter().any(|s| (s.w - w).norm_squared() <= 1e-28 * scale * scale) {
            break;
        }
        simplex.push(Vertex { a, b, w });
        let (sub, lambda) = closest_on_simplex(&simplex);
        simplex = sub.iter().map(|&i| simplex[i]).collect();
        weights = lambda;
        let next: Vec3 = simplex.iter().zip(&weights).map(|(s, l)| s.w * *l).sum();
        if next.norm_squared() >= vv {
            // numerical stall; keep the better of the two
            if next.norm_squared() > vv {
                break;
            }
        }
        v = next;
        if simplex.len() == 4 {
            return finish(&simplex, &weights, true);
        }
    }
    finish(&simplex, &weights, false)
}

fn finish(simplex: &[Vertex], weights: &[f64], overlap: bool) -> GjkResult {
    let pa: Vec3 = simplex.iter().zip(weights).map(|(s, l)| s.a * *l).sum();
    let pb: Vec3 = simplex.iter().zip(weights).map(|(s, l)| s.b * *l).sum();
    if overlap {
        return GjkResult { distance: 0.0, point_a: pa, point_b: pb, overlap: true };
    }
    let d = (pa - pb).norm();
    GjkResult { distance: d, point_a: pa, point_b: pb, overlap: d == 0.0 }
}

/// Closest point of the convex hull of `pts` (≤ 4 points) to the origin, by
/// enumerating faces of the simplex. Returns the indices of the supporting
/// sub-simplex and its barycentric weights.
fn closest_on_simplex(pts: &[Vertex]) -> (Vec<usize>, Vec<f64>) {
    let n = pts.len();
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let Some(lambda) = affine_projection(pts, &idx) else { continue };
        if lambda.iter().any(|&l| l <= 0.0) {
            continue;
        }
        let p: Vec3 = idx.iter().zip(&lambda).map(|(&i, l)| pts[i].w * *l).sum();
        let d2 = p.norm_squared();
        if best.as_ref().is_none_or(|(bd, _, _)| d2 < *bd) {
            best = Some((d2, idx, lambda));
        }
    }
    match best {
        Some((_, idx, lambda)) => (idx, lambda),
        None => {
            // degenerate simplex: fall back to the nearest vertex
            let i = (0..n)
                .min_by(|&i, &j| pts[i].w.norm_squared().total_cmp(&pts[j].w.norm_squared()))
                .unwrap_or(0);
            (vec![i], vec![1.0])
        }
    }
}

/// Barycentric weights of the projection of the origin onto the affine hull of
/// the selected points, or `None` when the points are affinely dependent.
fn affine_projection(pts: &[Vertex], idx: &[usize]) -> Option<Vec<f64>> {
    let k = idx.len();
    if k == 1 {
        return Some(vec![1.0]);
    }
    let p0 = pts[idx[0]].w;
    let m = k - 1;
    // Solve Gram system G μ = -E^T p0 with E = [p_i - p0]
    let e: Vec<Vec3> = idx[1..].iter().map(|&i| pts[i].w - p0).collect();
    let mut g = nalgebra::DMatrix::<f64>::zeros(m, m);
    let mut rhs = nalgebra::DVector::<f64>::zeros(m);
    let mut scale: f64 = 0.0;
    for r in 0..m {
        for c in 0..m {
            g[(r, c)] = e[r].dot(&e[c]);
        }
        rhs[r] = -e[r].dot(&p0);
        scale = scale.max(g[(r, r)]);
    }
    let lu = g.clone().lu();
    let det = lu.determinant();
    if det.abs() <= 1e-24 * scale.powi(m as i32) || !det.is_finite() {
        return None;
    }
    let mu = lu.solve(&rhs)?;
    let mut out = Vec::with_capacity(k);
    out.push(1.0 - mu.sum());
    out.extend(mu.iter().copied());
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_support(center: Vec3, half: f64) -> impl Fn(&Vec3) -> Vec3 {
        move |d: &Vec3| center + Vec3::new(half * d.x.signum(), half * d.y.signum(), half * d.z.signum())
    }

    #[test]
    fn separated_cubes() {
        let sa = cube_support(Vec3::new(2.0, 0.0, 0.0), 0.5);
        let sb = cube_support(Vec3::new(-2.0, 0.0, 0.0), 0.5);
        let r = distance(|d| (sa(d), sb(&(-d))), Vec3::x());
        assert!(!r.overlap);
        assert!((r.distance - 3.0).abs() < 1e-12);
        assert!((r.point_a.x - 1.5).abs() < 1e-12);
        assert!((r.point_b.x + 1.5).abs() < 1e-12);
    }

    #[test]
    fn overlapping_cubes() {
        let sa = cube_support(Vec3::new(0.3, 0.1, 0.0), 0.5);
        let sb = cube_support(Vec3::zeros(), 0.5);
        let r = distance(|d| (sa(d), sb(&(-d))), Vec3::x());
        assert!(r.overlap);
        assert_eq!(r.distance, 0.0);
    }
}
