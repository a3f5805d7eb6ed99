//! Small bundled test problems: two toy grippers and three analytic clouds.
//!
//! Grippers approach along their local `−z`: fingers hang below the palm. Clouds
//! come with outward normals and already have a unit bounding-box diagonal.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hull::box_hull;
use crate::io::{self, OrientedCloud};
use crate::kinematics::{ConvexLink, Joint, JointType, KinematicModel, Pose};
use crate::{so3, Result, Vec3};

fn link(name: &str, parent: Option<usize>, joint: Joint, center: Vec3, half: Vec3) -> ConvexLink {
    ConvexLink { name: name.into(), parent, joint, hull: box_hull(center, half) }
}

fn root() -> Joint {
    Joint { kind: JointType::Free6, axis: Vec3::z(), origin: Pose::identity(), limits: None }
}

/// Palm plus two prismatic fingers opening along `±x` (8 parameters).
pub fn parallel_jaw() -> KinematicModel {
    let finger_half = Vec3::new(0.015, 0.04, 0.15);
    let finger_center = Vec3::new(0.0, 0.0, -0.175);
    let mut links = vec![link("palm", None, root(), Vec3::zeros(), Vec3::new(0.16, 0.05, 0.025))];
    for (name, side) in [("finger_left", -1.0), ("finger_right", 1.0)] {
        let joint = Joint {
            kind: JointType::Prismatic,
            axis: Vec3::new(side, 0.0, 0.0),
            origin: Pose::translation(Vec3::new(side * 0.12, 0.0, 0.0)),
            limits: Some([0.17, 0.23]),
        };
        links.push(link(name, Some(0), joint, finger_center, finger_half));
    }
    KinematicModel::new(links).expect("parallel jaw fixture is valid")
}

/// Palm plus three two-joint revolute fingers at 120° (12 parameters).
pub fn claw() -> KinematicModel {
    let mut links = vec![link("palm", None, root(), Vec3::zeros(), Vec3::new(0.28, 0.28, 0.025))];
    for i in 0..3 {
        let phi = TAU * i as f64 / 3.0;
        let base = Pose::new(so3::exp(&(Vec3::z() * phi)), Vec3::new(0.28 * phi.cos(), 0.28 * phi.sin(), -0.025));
        // rotating about local y swings the finger tip toward the palm axis
        let proximal = Joint { kind: JointType::Revolute, axis: Vec3::y(), origin: base, limits: Some([-0.2, -0.1]) };
        let parent = links.len();
        links.push(link(
            &format!("proximal{i}"),
            Some(0),
            proximal,
            Vec3::new(0.0, 0.0, -0.1),
            Vec3::new(0.02, 0.03, 0.08),
        ));
        let distal = Joint {
            kind: JointType::Revolute,
            axis: Vec3::y(),
            origin: Pose::translation(Vec3::new(0.0, 0.0, -0.2)),
            limits: Some([0.0, 0.2]),
        };
        links.push(link(
            &format!("distal{i}"),
            Some(parent),
            distal,
            Vec3::new(0.0, 0.0, -0.08),
            Vec3::new(0.02, 0.025, 0.06),
        ));
    }
    KinematicModel::new(links).expect("claw fixture is valid")
}

/// Fibonacci-lattice sphere with bounding-box diagonal 1.
pub fn sphere_cloud(n: usize) -> OrientedCloud {
    let r = 0.5 / 3f64.sqrt();
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let rho = (1.0 - z * z).sqrt();
        let a = golden * i as f64;
        let u = Vec3::new(rho * a.cos(), rho * a.sin(), z);
        points.push(u * r);
        normals.push(u);
    }
    OrientedCloud { points, normals }
}

/// Uniform random points on a box with half-extents `(0.35, 0.25, 0.15)`
/// scaled to a unit diagonal.
pub fn box_cloud(n: usize, seed: u64) -> OrientedCloud {
    let half = Vec3::new(0.35, 0.25, 0.15);
    let half = half / (2.0 * half.norm());
    let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
    let total: f64 = 2.0 * areas.iter().sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.random::<f64>() * total;
        let mut face = 0;
        while face < 5 && pick >= areas[face / 2] {
            pick -= areas[face / 2];
            face += 1;
        }
        let axis = face / 2;
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let mut p = Vec3::from_fn(|k, _| (2.0 * rng.random::<f64>() - 1.0) * half[k]);
        p[axis] = sign * half[axis];
        let mut nrm = Vec3::zeros();
        nrm[axis] = sign;
        points.push(p);
        normals.push(nrm);
    }
    OrientedCloud { points, normals }
}

/// Uniform random points on a torus (radii 1 and 0.35, axis `z`) scaled to a
/// unit diagonal.
pub fn torus_cloud(n: usize, seed: u64) -> OrientedCloud {
    let (big, small) = (1.0, 0.35);
    let diag = Vec3::new(2.0 * (big + small), 2.0 * (big + small), 2.0 * small).norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    while points.len() < n {
        let u = rng.random::<f64>() * TAU;
        let v = rng.random::<f64>() * TAU;
        // area element ∝ big + small·cos v
        if rng.random::<f64>() * (big + small) > big + small * v.cos() {
            continue;
        }
        let nrm = Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
        let center = Vec3::new(big * u.cos(), big * u.sin(), 0.0);
        points.push((center + nrm * small) / diag);
        normals.push(nrm);
    }
    OrientedCloud { points, normals }
}

/// Writes the grippers, clouds and sample configs into `dir`.
pub fn write_all(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| crate::Error::Io { path: dir.to_path_buf(), source })?;
    io::write_text(&dir.join("parallel_jaw.json"), &parallel_jaw().to_json())?;
    io::write_text(&dir.join("claw.json"), &claw().to_json())?;
    for (name, cloud) in [
        ("sphere.ply", sphere_cloud(20_000)),
        ("box.ply", box_cloud(20_000, 1)),
        ("torus.ply", torus_cloud(20_000, 2)),
    ] {
        io::write_text(&dir.join(name), &io::ply_string(&cloud.points, &cloud.normals))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_dimensions() {
        assert_eq!(parallel_jaw().dof_count(), 8);
        assert_eq!(claw().dof_count(), 12);
        for cloud in [sphere_cloud(500), box_cloud(500, 3), torus_cloud(500, 4)] {
            let (lo, hi) = cloud.points.iter().fold((cloud.points[0], cloud.points[0]), |(a, b), p| (a.inf(p), b.sup(p)));
            let d = (hi - lo).norm();
            assert!((d - 1.0).abs() < 0.05, "diagonal {d}");
            assert!(cloud.normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-12));
        }
    }
}
