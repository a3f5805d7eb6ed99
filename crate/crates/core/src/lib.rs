//! Grasp planning by maximizing a discretized Q∞ metric.
//!
//! The planner relaxes the contact complementarity constraints of a grasp into a
//! single kernel-integral bound per object point, which turns the grasp metric into
//! a smooth function of the gripper configuration:
//!
//! ```text
//! G^d(θ) = Σ_x a_x s^d(x) Σ_y a_y exp(-|x - y(θ)|² / α)      Q∞ = min_d G^d(θ)
//! ```
//!
//! The double sum and its configuration gradient are evaluated with a fast Gauss
//! transform ([`fgt`]), collision freedom is kept by log-barrier terms
//! ([`barriers`]), and the resulting program is solved by a line-search SQP
//! ([`sqp`]).
//!
//! Normal convention: every object normal `n(x)` points *into* the object, i.e.
//! along the direction of an admissible pushing force. Loaders flip the usual
//! outward normals found in PLY/OBJ files unless told otherwise.

pub mod barriers;
mod error;
pub mod fgt;
pub mod fixtures;
pub mod grasp;
pub mod gjk;
pub mod hull;
pub mod io;
pub mod kinematics;
pub mod oracles;
pub mod par;
pub mod planner;
pub mod sampling;
pub mod so3;
pub mod sqp;
pub mod verify;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
