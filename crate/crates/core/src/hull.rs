//! Convex hulls of small vertex sets and point-to-hull distance queries.

use crate::kinematics::Pose;
use crate::{gjk, Error, Mat3, Result, Vec3};

/// Hulls with at most this many vertices are queried by scanning every facet
/// triangle; larger ones go through GJK.
const EXHAUSTIVE_LIMIT: usize = 32;
const MAX_VERTICES: usize = 256;

#[derive(Clone, Debug)]
pub struct Facet {
    /// Outward unit normal.
    pub normal: Vec3,
    /// `normal · v == offset` on the facet, `<=` for every hull vertex.
    pub offset: f64,
    /// Facet vertices in counter-clockwise order seen from outside.
    pub vertices: Vec<usize>,
}

/// Which boundary feature of the hull a closest point lies on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Feature {
    Interior,
    Vertex,
    /// Edge with unit direction.
    Edge(Vec3),
    /// Face with outward unit normal.
    Face(Vec3),
}

#[derive(Clone, Copy, Debug)]
pub struct Closest {
    pub distance: f64,
    pub point: Vec3,
    pub feature: Feature,
}

impl Closest {
    /// Hessian of the distance with respect to the query point.
    pub fn hessian(&self, query: &Vec3) -> Mat3 {
        if self.distance <= 0.0 {
            return Mat3::zeros();
        }
        let u = (query - self.point) / self.distance;
        let uu = u * u.transpose();
        match self.feature {
            Feature::Interior | Feature::Face(_) => Mat3::zeros(),
            Feature::Vertex => (Mat3::identity() - uu) / self.distance,
            Feature::Edge(e) => (Mat3::identity() - e * e.transpose() - uu) / self.distance,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvexHull {
    vertices: Vec<Vec3>,
    facets: Vec<Facet>,
    triangles: Vec<[usize; 3]>,
    centroid: Vec3,
    scale: f64,
}

impl ConvexHull {
    /// Builds the hull of `vertices`. Fails unless the points span a
    /// full-dimensional body.
    pub fn new(vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() < 4 {
            return Err(Error::invalid(format!(
                "convex hull needs at least 4 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.len() > MAX_VERTICES {
            return Err(Error::invalid(format!(
                "convex hull limited to {MAX_VERTICES} vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("non-finite hull vertex"));
        }
        let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
        let scale = vertices.iter().map(|v| (v - centroid).norm()).fold(0.0, f64::max);
        let tol = 1e-9 * scale.max(1e-300);
        let facets = find_facets(&vertices, tol, scale);
        if facets.len() < 4 {
            return Err(Error::invalid("hull vertices are coplanar (degenerate hull)"));
        }
        let mut triangles = Vec::new();
        for f in &facets {
            for k in 1..f.vertices.len() - 1 {
                let tri = [f.vertices[0], f.vertices[k], f.vertices[k + 1]];
                let area = (vertices[tri[1]] - vertices[tri[0]])
                    .cross(&(vertices[tri[2]] - vertices[tri[0]]))
                    .norm();
                if area > tol * scale {
                    triangles.push(tri);
                }
            }
        }
        Ok(ConvexHull { vertices, facets, triangles, centroid, scale })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Boundary triangulation (outward orientation).
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Mean of the vertices.
    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    /// Largest vertex distance from the centroid.
    pub fn radius(&self) -> f64 {
        self.scale
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                0.5 * (self.vertices[t[1]] - self.vertices[t[0]])
                    .cross(&(self.vertices[t[2]] - self.vertices[t[0]]))
                    .norm()
            })
            .sum()
    }

    /// Vertex maximizing `⟨v, d⟩`.
    pub fn support(&self, d: &Vec3) -> Vec3 {
        let mut best = self.vertices[0];
        let mut best_dot = best.dot(d);
        for v in &self.vertices[1..] {
            let dot = v.dot(d);
            if dot > best_dot {
                best = *v;
                best_dot = dot;
            }
        }
        best
    }

    /// Axis-aligned bounds `(min, max)` of the vertices.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Signed distance of `p` to the furthest facet plane; `<= 0` inside.
    pub fn max_facet_excess(&self, p: &Vec3) -> f64 {
        self.facets
            .iter()
            .map(|f| f.normal.dot(p) - f.offset)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.max_facet_excess(p) <= 0.0
    }

    /// Closest hull point to `p` (all in the hull's own frame).
    pub fn closest_point(&self, p: &Vec3) -> Closest {
        if self.contains(p) {
            return Closest { distance: 0.0, point: *p, feature: Feature::Interior };
        }
        let point = if self.vertices.len() <= EXHAUSTIVE_LIMIT {
            let mut best = (f64::INFINITY, *p);
            for t in &self.triangles {
                let q = closest_on_triangle(p, &self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]);
                let d2 = (p - q).norm_squared();
                if d2 < best.0 {
                    best = (d2, q);
                }
            }
            best.1
        } else {
            let r = gjk::distance(|d| (self.support(d), *p), p - self.centroid);
            r.point_a
        };
        let distance = (p - point).norm();
        if distance == 0.0 {
            return Closest { distance, point, feature: Feature::Interior };
        }
        let feature = self.classify(&point, &((p - point) / distance));
        Closest { distance, point, feature }
    }

    /// Feature containing `w` whose normal cone contains `u`.
    fn classify(&self, w: &Vec3, u: &Vec3) -> Feature {
        let tol = 1e-9 * self.scale;
        let level = u.dot(w);
        let support: Vec<Vec3> =
            self.vertices.iter().filter(|v| u.dot(v) >= level - tol).copied().collect();
        if support.len() <= 1 {
            return Feature::Vertex;
        }
        // farthest pair defines a candidate edge line
        let (mut a, mut b, mut best) = (0, 0, 0.0);
        for i in 0..support.len() {
            for j in i + 1..support.len() {
                let d = (support[i] - support[j]).norm_squared();
                if d > best {
                    (a, b, best) = (i, j, d);
                }
            }
        }
        if best.sqrt() <= tol {
            return Feature::Vertex;
        }
        let e = (support[b] - support[a]).normalize();
        let off_line = support.iter().any(|v| {
            let r = v - support[a];
            (r - e * r.dot(&e)).norm() > tol
        });
        if !off_line {
            // the witness might still sit at an edge endpoint
            for v in [support[a], support[b]] {
                if (w - v).norm() <= tol {
                    return Feature::Vertex;
                }
            }
            return Feature::Edge(e);
        }
        Feature::Face(*u)
    }
}

fn find_facets(v: &[Vec3], tol: f64, scale: f64) -> Vec<Facet> {
    let n = v.len();
    let mut facets: Vec<Facet> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let c = (v[j] - v[i]).cross(&(v[k] - v[i]));
                let len = c.norm();
                if len <= 1e-12 * scale * scale || len == 0.0 {
                    continue;
                }
                let mut normal = c / len;
                let off = normal.dot(&v[i]);
                let (mut above, mut below) = (false, false);
                for p in v {
                    let s = normal.dot(p) - off;
                    above |= s > tol;
                    below |= s < -tol;
                    if above && below {
                        break;
                    }
                }
                if above && below {
                    continue;
                }
                if above {
                    normal = -normal;
                }
                let offset = normal.dot(&v[i]);
                if facets
                    .iter()
                    .any(|f| f.normal.dot(&normal) > 1.0 - 1e-9 && (f.offset - offset).abs() <= tol)
                {
                    continue;
                }
                let members: Vec<usize> =
                    (0..n).filter(|&m| (normal.dot(&v[m]) - offset).abs() <= tol).collect();
                facets.push(Facet { normal, offset, vertices: order_ccw(v, &members, &normal) });
            }
        }
    }
    facets
}

fn order_ccw(v: &[Vec3], members: &[usize], normal: &Vec3) -> Vec<usize> {
    let center = members.iter().map(|&m| v[m]).sum::<Vec3>() / members.len() as f64;
    let trial = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = normal.cross(&trial).normalize();
    let e2 = normal.cross(&e1);
    let mut out = members.to_vec();
    out.sort_by(|&a, &b| {
        let ra = v[a] - center;
        let rb = v[b] - center;
        ra.dot(&e2).atan2(ra.dot(&e1)).total_cmp(&rb.dot(&e2).atan2(rb.dot(&e1)))
    });
    out
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Distance from a world point to a hull placed at `pose`, with its gradient
/// with respect to the pose entries (`R` row-major, then `t`).
#[derive(Clone, Copy, Debug)]
pub struct ConvexDistance {
    pub distance: f64,
    /// Closest hull point in world coordinates.
    pub witness: Vec3,
    pub gradient: [f64; 12],
}

pub fn point_to_convex_distance(x: &Vec3, hull: &ConvexHull, pose: &Pose) -> ConvexDistance {
    let local = pose.apply_inverse(x);
    let c = hull.closest_point(&local);
    let witness = pose.apply(&c.point);
    let mut gradient = [0.0; 12];
    if c.distance > 0.0 {
        let u = (x - witness) / c.distance;
        for i in 0..3 {
            for j in 0..3 {
                gradient[3 * i + j] = -u[i] * c.point[j];
            }
            gradient[9 + i] = -u[i];
        }
    }
    ConvexDistance { distance: c.distance, witness, gradient }
}

/// Axis-aligned cube with the given center and half-width.
pub fn cube(center: Vec3, half: f64) -> ConvexHull {
    box_hull(center, Vec3::repeat(half))
}

/// Axis-aligned box with the given center and half-extents.
pub fn box_hull(center: Vec3, half: Vec3) -> ConvexHull {
    let mut v = Vec::with_capacity(8);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                v.push(center + Vec3::new(sx * half.x, sy * half.y, sz * half.z));
            }
        }
    }
    ConvexHull::new(v).expect("box is full-dimensional")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cube_has_six_facets() {
        let h = cube(Vec3::zeros(), 0.5);
        assert_eq!(h.facets().len(), 6);
        assert_eq!(h.triangles().len(), 12);
        assert_relative_eq!(h.surface_area(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_point_has_zero_distance() {
        let h = cube(Vec3::zeros(), 0.5);
        let c = h.closest_point(&h.centroid());
        assert_eq!(c.distance, 0.0);
        assert_eq!(c.feature, Feature::Interior);
    }

    #[test]
    fn axis_aligned_face() {
        let h = cube(Vec3::zeros(), 0.5);
        let c = h.closest_point(&Vec3::new(2.0, 0.0, 0.0));
        assert_relative_eq!(c.distance, 1.5, epsilon = 1e-14);
        assert_relative_eq!(c.point, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-14);
        assert!(matches!(c.feature, Feature::Face(_)));
    }

    #[test]
    fn features_are_classified() {
        let h = cube(Vec3::zeros(), 0.5);
        let c = h.closest_point(&Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(c.feature, Feature::Vertex);
        let c = h.closest_point(&Vec3::new(1.0, 1.0, 0.1));
        match c.feature {
            Feature::Edge(e) => assert_relative_eq!(e.z.abs(), 1.0, epsilon = 1e-12),
            f => panic!("expected edge, got {f:?}"),
        }
    }

    #[test]
    fn coplanar_points_are_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)];
        assert!(ConvexHull::new(v).is_err());
    }

    #[test]
    fn gjk_path_agrees_with_exhaustive_path() {
        // 40 points on a sphere force the GJK branch
        let mut pts = Vec::new();
        for i in 0..40 {
            let z = -1.0 + 2.0 * (i as f64 + 0.5) / 40.0;
            let phi = i as f64 * 2.399963;
            let r = (1.0 - z * z).sqrt();
            pts.push(Vec3::new(r * phi.cos(), r * phi.sin(), z));
        }
        let big = ConvexHull::new(pts.clone()).unwrap();
        for q in [Vec3::new(2.0, 0.3, -0.1), Vec3::new(-0.2, 1.7, 1.1), Vec3::new(0.0, 0.0, -3.0)] {
            let c = big.closest_point(&q);
            let mut best = f64::INFINITY;
            for t in big.triangles() {
                let p = closest_on_triangle(&q, &pts[t[0]], &pts[t[1]], &pts[t[2]]);
                best = best.min((q - p).norm());
            }
            assert_relative_eq!(c.distance, best, epsilon = 1e-10);
        }
    }
}
