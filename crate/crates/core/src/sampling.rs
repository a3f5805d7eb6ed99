//! Poisson-disk surface samples carrying the uniform quadrature weight `πr²`.
//!
//! Dart throwing alone packs roughly twice as many points as `Area / (πr²)`,
//! which would make the summed weights overshoot the surface area. Both
//! samplers therefore stop once the weights account for the whole surface.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hull::ConvexHull;
use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSample {
    pub position: Vec3,
    /// Unit normal (inward for object samples, outward for gripper samples).
    pub normal: Vec3,
    pub area_weight: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SurfaceSamples {
    pub samples: Vec<PointSample>,
    /// Owning link of each sample; `None` for object samples.
    pub link_id: Option<Vec<usize>>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.samples.iter().map(|s| s.position).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.area_weight).sum()
    }

    /// Samples of one link (gripper samples only).
    pub fn link_samples(&self, link: usize) -> impl Iterator<Item = &PointSample> {
        let ids = self.link_id.as_deref().unwrap_or(&[]);
        self.samples.iter().zip(ids).filter(move |(_, &l)| l == link).map(|(s, _)| s)
    }
}

/// Uniform hash grid used for radius queries.
pub(crate) struct Grid {
    cell: f64,
    map: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl Grid {
    pub(crate) fn new(cell: f64) -> Self {
        Grid { cell, map: HashMap::new() }
    }

    fn key(&self, p: &Vec3) -> (i64, i64, i64) {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    pub(crate) fn insert(&mut self, p: &Vec3, id: usize) {
        let k = self.key(p);
        self.map.entry(k).or_default().push(id);
    }

    /// Calls `f` for every stored id in the 27 cells around `p`.
    pub(crate) fn for_neighbors(&self, p: &Vec3, mut f: impl FnMut(usize)) {
        let (x, y, z) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.map.get(&(x + dx, y + dy, z + dz)) {
                        v.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }
}

/// Target sample count for a surface of the given area.
fn target_count(area: f64, r: f64) -> usize {
    ((area / (PI * r * r)).round() as usize).max(1)
}

/// Poisson-disk samples on a triangle mesh. Normals are the triangle normals
/// implied by counter-clockwise vertex order.
pub fn poisson_disk_mesh(
    vertices: &[Vec3],
    triangles: &[[usize; 3]],
    r: f64,
    seed: u64,
) -> Result<Vec<PointSample>> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("Poisson radius must be positive, got {r}")));
    }
    let areas: Vec<f64> = triangles
        .iter()
        .map(|t| 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(&(vertices[t[2]] - vertices[t[0]])).norm())
        .collect();
    let total: f64 = areas.iter().sum();
    if triangles.is_empty() || !(total > 0.0) {
        return Err(Error::invalid("cannot sample an empty or degenerate surface"));
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let target = target_count(total, r);
    let max_failures = 200 + 30 * target;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = Grid::new(r);
    let mut out: Vec<PointSample> = Vec::with_capacity(target);
    let mut failures = 0;
    while out.len() < target && failures < max_failures {
        let u: f64 = rng.random::<f64>() * total;
        let ti = cumulative.partition_point(|&c| c < u).min(triangles.len() - 1);
        let [a, b, c] = triangles[ti].map(|i| vertices[i]);
        let (mut s, mut t): (f64, f64) = (rng.random(), rng.random());
        if s + t > 1.0 {
            s = 1.0 - s;
            t = 1.0 - t;
        }
        let p = a + (b - a) * s + (c - a) * t;
        let mut clear = true;
        grid.for_neighbors(&p, |i| clear &= (out[i].position - p).norm() >= r);
        if !clear {
            failures += 1;
            continue;
        }
        failures = 0;
        grid.insert(&p, out.len());
        let normal = (b - a).cross(&(c - a)).normalize();
        out.push(PointSample { position: p, normal, area_weight: PI * r * r });
    }
    Ok(out)
}

/// Thins a dense point cloud with normals to a Poisson-disk subset of radius
/// `r`. The surface area is estimated from 8-nearest-neighbour spacing.
pub fn poisson_disk_cloud(points: &[Vec3], normals: &[Vec3], r: f64, seed: u64) -> Result<SurfaceSamples> {
    if points.is_empty() {
        return Err(Error::invalid("cannot sample an empty point cloud"));
    }
    if points.len() != normals.len() {
        return Err(Error::invalid("point and normal counts differ"));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("Poisson radius must be positive, got {r}")));
    }
    let area = estimate_cloud_area(points);
    let target = target_count(area, r);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut grid = Grid::new(r);
    let mut samples: Vec<PointSample> = Vec::with_capacity(target);
    for i in order {
        if samples.len() >= target {
            break;
        }
        let p = points[i];
        let mut clear = true;
        grid.for_neighbors(&p, |j| clear &= (samples[j].position - p).norm() >= r);
        if clear {
            grid.insert(&p, samples.len());
            samples.push(PointSample { position: p, normal: normals[i].normalize(), area_weight: PI * r * r });
        }
    }
    Ok(SurfaceSamples { samples, link_id: None })
}

/// Surface area represented by a roughly uniform cloud: each point stands for
/// the disk reaching its `K`-th neighbour, shared among `K` points.
pub fn estimate_cloud_area(points: &[Vec3]) -> f64 {
    const K: usize = 8;
    if points.len() <= K {
        return 0.0;
    }
    let (lo, hi) = points.iter().fold((points[0], points[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let diag = (hi - lo).norm().max(1e-12);
    // start from the spacing of a uniform surface cover and widen as needed
    let mut cell = diag / (points.len() as f64).sqrt();
    loop {
        let mut grid = Grid::new(cell);
        for (i, p) in points.iter().enumerate() {
            grid.insert(p, i);
        }
        let mut total = 0.0;
        let mut ok = true;
        for (i, p) in points.iter().enumerate() {
            let mut d: Vec<f64> = Vec::new();
            grid.for_neighbors(p, |j| {
                if j != i {
                    d.push((points[j] - p).norm());
                }
            });
            if d.len() < K {
                ok = false;
                break;
            }
            d.sort_by(f64::total_cmp);
            // only distances below the cell size are guaranteed complete
            if d[K - 1] > cell {
                ok = false;
                break;
            }
            total += PI * d[K - 1] * d[K - 1] / K as f64;
        }
        if ok {
            return total;
        }
        cell *= 1.5;
    }
}

/// Samples every link hull in its own frame (the zero-configuration samples).
pub fn sample_links(hulls: &[&ConvexHull], r: f64, seed: u64) -> Result<SurfaceSamples> {
    let mut samples = Vec::new();
    let mut ids = Vec::new();
    for (l, h) in hulls.iter().enumerate() {
        let s = poisson_disk_mesh(h.vertices(), h.triangles(), r, seed.wrapping_add(l as u64))?;
        ids.extend(std::iter::repeat_n(l, s.len()));
        samples.extend(s);
    }
    if samples.is_empty() {
        return Err(Error::invalid("gripper produced no samples"));
    }
    Ok(SurfaceSamples { samples, link_id: Some(ids) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> (Vec<Vec3>, Vec<[usize; 3]>) {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()];
        (v, vec![[0, 1, 2], [0, 2, 3]])
    }

    #[test]
    fn unit_square_respects_radius_and_density() {
        let (v, t) = square();
        let r = 0.1;
        let s = poisson_disk_mesh(&v, &t, r, 7).unwrap();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert!((s[i].position - s[j].position).norm() >= r);
            }
        }
        let expected = 1.0 / (PI * r * r);
        let ratio = s.len() as f64 / expected;
        assert!((0.3..=1.5).contains(&ratio), "ratio {ratio}");
        assert!(s.iter().all(|p| (p.normal - Vec3::z()).norm() < 1e-12));
    }

    #[test]
    fn tiny_triangle_gets_one_sample() {
        let v = vec![Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.0, 0.01, 0.0)];
        let s = poisson_disk_mesh(&v, &[[0, 1, 2]], 0.1, 1).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        let (v, t) = square();
        assert!(poisson_disk_mesh(&v, &t, 0.0, 1).is_err());
        assert!(poisson_disk_mesh(&v, &[], 0.1, 1).is_err());
        assert!(poisson_disk_cloud(&[], &[], 0.1, 1).is_err());
    }

    #[test]
    fn cloud_area_estimate_on_a_grid() {
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                pts.push(Vec3::new(i as f64 / 59.0, j as f64 / 59.0, 0.0));
            }
        }
        let a = estimate_cloud_area(&pts);
        assert!((0.7..1.4).contains(&a), "area {a}");
    }
}
