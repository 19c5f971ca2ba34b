//! Whole-body MPC toolkit for mobile manipulation of articulated objects.
//!
//! The crate is organized around a planning and benchmarking pipeline:
//!
//! - [`model`]: kinematic model of a differential-drive base with a serial
//!   arm (forward kinematics, system flow, Jacobians).
//! - [`mapping`]: occupancy-grid fusion of depth point clouds and
//!   robot-centric Euclidean signed distance field (ESDF) windows.
//! - [`ocp`]: optimal control problem assembly — end-effector tracking
//!   costs, relaxed-barrier and squared-hinge penalties, merit evaluation.
//! - [`slq`]: sequential linear quadratic trajectory optimizer with a
//!   real-time-iteration MPC loop and affine policy evaluation.
//! - [`object_centric`]: articulation models, grasp-frame keyframe plans,
//!   and RANSAC-based articulation estimation from point clouds.
//! - [`baselines`]: RRT* base navigation, differential-IK whole-body
//!   control, and a fixed-base solver variant.
//! - [`sim`]: deterministic kinematic world with articulated objects,
//!   dynamic obstacles, depth sensing, and success evaluation.
//! - [`bench`]: episode runner, benchmark aggregation, merit-based option
//!   ranking, and report export.

pub mod baselines;
pub mod bench;
pub mod mapping;
pub mod model;
pub mod object_centric;
pub mod ocp;
pub mod sim;
pub mod slq;

pub use model::{InputVector, Pose, RobotModel, StateVector};
