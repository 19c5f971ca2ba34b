//! Kinematic model of a wheel-based mobile manipulator.
//!
//! The robot is a differential-drive base moving on a flat floor (planar
//! SE(2), fixed height) carrying a serial arm. States are `(x_b, y_b,
//! θ_b, q)`, inputs are `(v, ω, q̇)`; the `(v, ω)` parameterization
//! structurally enforces the non-holonomic constraint of the base.

mod document;

pub use document::load_robot_model;

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

/// Errors from model loading and kinematic queries.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("duplicate joint name `{0}`")]
    DuplicateJoint(String),
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("cycle in kinematic chain involving joint `{0}`")]
    Cycle(String),
    #[error("joint `{0}`: axis norm {1} is not unit length")]
    NonUnitAxis(String, f64),
    #[error("joint `{0}`: lower position limit must be below upper")]
    BadLimits(String),
    #[error("joint `{0}`: velocity limit must be positive")]
    BadVelocityLimit(String),
    #[error("sphere {0}: radius must be positive")]
    BadRadius(usize),
    #[error("self-collision pair ({0}, {1}): {2}")]
    BadCollisionPair(usize, usize, String),
    #[error("base section: {0}")]
    BadBase(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive")]
    BadTimeStep,
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a > -PI && a <= PI {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut w = a.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    w
}

/// A position and orientation in the inertial frame.
///
/// The quaternion is kept unit-norm and canonicalized to a non-negative
/// scalar part.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: canonicalize(orientation),
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }
}

/// Canonicalizes a unit quaternion to a non-negative scalar part.
pub fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Robot state `(x_b, y_b, θ_b, q₁..q_n)` with the base yaw wrapped to
/// `(-π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<f64>);

impl StateVector {
    pub fn new(base: (f64, f64, f64), arm: &[f64]) -> Self {
        let mut v = DVector::zeros(3 + arm.len());
        v[0] = base.0;
        v[1] = base.1;
        v[2] = wrap_angle(base.2);
        v.rows_mut(3, arm.len()).copy_from_slice(arm);
        Self(v)
    }

    /// Wraps the yaw component and takes ownership of the raw vector.
    pub fn from_vector(mut v: DVector<f64>) -> Self {
        assert!(v.len() >= 3, "state must have at least the base components");
        v[2] = wrap_angle(v[2]);
        Self(v)
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn base_x(&self) -> f64 {
        self.0[0]
    }

    pub fn base_y(&self) -> f64 {
        self.0[1]
    }

    pub fn base_yaw(&self) -> f64 {
        self.0[2]
    }

    pub fn arm(&self) -> &[f64] {
        &self.0.as_slice()[3..]
    }
}

/// Commanded rates `(v, ω, q̇₁..q̇_n)`: base forward and yaw rate plus arm
/// joint rates.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector(DVector<f64>);

impl InputVector {
    pub fn new(v: f64, omega: f64, arm_rates: &[f64]) -> Self {
        let mut u = DVector::zeros(2 + arm_rates.len());
        u[0] = v;
        u[1] = omega;
        u.rows_mut(2, arm_rates.len()).copy_from_slice(arm_rates);
        Self(u)
    }

    pub fn zeros(arm_dof: usize) -> Self {
        Self(DVector::zeros(2 + arm_dof))
    }

    pub fn from_vector(v: DVector<f64>) -> Self {
        assert!(v.len() >= 2, "input must have at least the base components");
        Self(v)
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn forward(&self) -> f64 {
        self.0[0]
    }

    pub fn yaw_rate(&self) -> f64 {
        self.0[1]
    }

    pub fn arm_rates(&self) -> &[f64] {
        &self.0.as_slice()[2..]
    }
}

/// Index of a frame in the kinematic tree: `0` is the base frame, frame
/// `i + 1` is the child frame of joint `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameId(pub usize);

impl FrameId {
    pub const BASE: FrameId = FrameId(0);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointType {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub joint_type: JointType,
    /// Axis in the joint's local frame (unit norm).
    pub axis: Unit<Vector3<f64>>,
    /// Fixed transform from the parent frame to the joint frame.
    pub origin: Isometry3<f64>,
    pub parent: FrameId,
    /// Position limits (rad or m).
    pub pos_limits: (f64, f64),
    /// Rate limit (rad/s or m/s), symmetric.
    pub vel_limit: f64,
}

/// Sphere used for self- and environment-collision checking, attached to
/// a frame at a fixed local offset.
#[derive(Debug, Clone)]
pub struct CollisionSphere {
    pub frame: FrameId,
    pub offset: Vector3<f64>,
    pub radius: f64,
}

/// Immutable description of the robot: kinematic tree, limits, collision
/// geometry, and the end-effector frame. Safe to share across workers.
#[derive(Debug, Clone)]
pub struct RobotModel {
    /// Height of the base frame origin above the floor.
    pub base_height: f64,
    /// Circumscribed radius of the base footprint (for navigation checks).
    pub base_radius: f64,
    pub base_lin_vel_limit: f64,
    pub base_ang_vel_limit: f64,
    pub joints: Vec<Joint>,
    pub spheres: Vec<CollisionSphere>,
    /// Pairs of sphere indices checked for self-collision.
    pub self_collision_pairs: Vec<(usize, usize)>,
    pub end_effector: FrameId,
}

impl RobotModel {
    /// Parses and validates the canonical model shipped with the crate: a
    /// differential-drive base with a 6-DoF arm.
    pub fn default_model() -> Self {
        load_robot_model(include_str!("../../assets/default_robot.toml"))
            .expect("shipped default model must be valid")
    }

    pub fn arm_dof(&self) -> usize {
        self.joints.len()
    }

    pub fn state_dim(&self) -> usize {
        3 + self.joints.len()
    }

    pub fn input_dim(&self) -> usize {
        2 + self.joints.len()
    }

    pub fn frame_count(&self) -> usize {
        1 + self.joints.len()
    }

    /// Resolves a frame name (`"base"` or a joint name) to its id.
    pub fn frame(&self, name: &str) -> Result<FrameId, ModelError> {
        if name == "base" {
            return Ok(FrameId::BASE);
        }
        self.joints
            .iter()
            .position(|j| j.name == name)
            .map(|i| FrameId(i + 1))
            .ok_or_else(|| ModelError::UnknownFrame(name.to_string()))
    }

    pub fn frame_name(&self, frame: FrameId) -> &str {
        if frame.0 == 0 {
            "base"
        } else {
            &self.joints[frame.0 - 1].name
        }
    }

    /// Parent of a frame in the tree (`None` for the base).
    pub fn frame_parent(&self, frame: FrameId) -> Option<FrameId> {
        if frame.0 == 0 {
            None
        } else {
            Some(self.joints[frame.0 - 1].parent)
        }
    }

    /// Symmetric per-channel input limits `(lo, hi)` in the order
    /// `(v, ω, q̇₁..q̇_n)`.
    pub fn input_limits(&self) -> Vec<(f64, f64)> {
        let mut lims = Vec::with_capacity(self.input_dim());
        lims.push((-self.base_lin_vel_limit, self.base_lin_vel_limit));
        lims.push((-self.base_ang_vel_limit, self.base_ang_vel_limit));
        for j in &self.joints {
            lims.push((-j.vel_limit, j.vel_limit));
        }
        lims
    }

    /// Pose of the base frame: SE(2) state lifted to SE(3) at the fixed
    /// base height.
    pub fn base_pose(&self, x: &StateVector) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(x.base_x(), x.base_y(), self.base_height),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), x.base_yaw()),
        )
    }

    fn check_state(&self, x: &StateVector) -> Result<(), ModelError> {
        if x.dim() != self.state_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.state_dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    fn check_input(&self, u: &InputVector) -> Result<(), ModelError> {
        if u.dim() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                got: u.dim(),
            });
        }
        Ok(())
    }

    /// Poses of every frame (base first, then each joint child frame) in
    /// the inertial frame.
    pub fn frame_poses(&self, x: &StateVector) -> Vec<Isometry3<f64>> {
        let mut poses = Vec::with_capacity(self.frame_count());
        poses.push(self.base_pose(x));
        for (i, joint) in self.joints.iter().enumerate() {
            let parent = poses[joint.parent.0];
            let motion = match joint.joint_type {
                JointType::Revolute => Isometry3::from_parts(
                    Translation3::identity(),
                    UnitQuaternion::from_axis_angle(&joint.axis, x.arm()[i]),
                ),
                JointType::Prismatic => Isometry3::from_parts(
                    Translation3::from(joint.axis.into_inner() * x.arm()[i]),
                    UnitQuaternion::identity(),
                ),
            };
            poses.push(parent * joint.origin * motion);
        }
        poses
    }

    /// Pose of `frame` in the inertial frame.
    pub fn forward_kinematics(&self, x: &StateVector, frame: FrameId) -> Result<Pose, ModelError> {
        self.check_state(x)?;
        if frame.0 >= self.frame_count() {
            return Err(ModelError::UnknownFrame(format!("#{}", frame.0)));
        }
        Ok(Pose::from_isometry(&self.frame_poses(x)[frame.0]))
    }

    /// World position of a collision sphere center.
    pub fn sphere_center(&self, poses: &[Isometry3<f64>], sphere: &CollisionSphere) -> Vector3<f64> {
        (poses[sphere.frame.0] * nalgebra::Point3::from(sphere.offset)).coords
    }

    /// State derivative: `ẋ_b = v cos θ, ẏ_b = v sin θ, θ̇_b = ω`, arm
    /// rates pass through.
    pub fn system_flow(&self, x: &StateVector, u: &InputVector) -> Result<DVector<f64>, ModelError> {
        self.check_state(x)?;
        self.check_input(u)?;
        let mut dx = DVector::zeros(self.state_dim());
        let (v, omega) = (u.forward(), u.yaw_rate());
        let yaw = x.base_yaw();
        dx[0] = v * yaw.cos();
        dx[1] = v * yaw.sin();
        dx[2] = omega;
        dx.rows_mut(3, self.arm_dof()).copy_from_slice(u.arm_rates());
        Ok(dx)
    }

    /// One RK4 step of the system flow with a zero-order-hold input; the
    /// base yaw is re-wrapped afterwards.
    pub fn integrate_state(
        &self,
        x: &StateVector,
        u: &InputVector,
        dt: f64,
    ) -> Result<StateVector, ModelError> {
        if !(dt > 0.0) {
            return Err(ModelError::BadTimeStep);
        }
        if !u.vector().iter().all(|c| c.is_finite()) {
            return Err(ModelError::NonFinite("input"));
        }
        let flow = |v: &DVector<f64>| -> Result<DVector<f64>, ModelError> {
            // Intermediate RK4 stages evaluate the flow at unwrapped yaw;
            // cos/sin are periodic so the result is unaffected.
            let xs = StateVector(v.clone());
            self.system_flow(&xs, u)
        };
        let xv = x.vector();
        let k1 = flow(xv)?;
        let k2 = flow(&(xv + &k1 * (dt / 2.0)))?;
        let k3 = flow(&(xv + &k2 * (dt / 2.0)))?;
        let k4 = flow(&(xv + &k3 * dt))?;
        let next = xv + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        Ok(StateVector::from_vector(next))
    }

    /// Difference `a - b` in state space with the yaw component wrapped.
    pub fn state_diff(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut d = a - b;
        d[2] = wrap_angle(d[2]);
        d
    }

    /// Geometric Jacobian of a frame with respect to the *state*
    /// coordinates `(x_b, y_b, θ_b, q)`: rows are inertial-frame linear
    /// then angular velocity, 6×(3+n).
    pub fn pose_state_jacobian(
        &self,
        x: &StateVector,
        frame: FrameId,
    ) -> Result<DMatrix<f64>, ModelError> {
        self.check_state(x)?;
        if frame.0 >= self.frame_count() {
            return Err(ModelError::UnknownFrame(format!("#{}", frame.0)));
        }
        let poses = self.frame_poses(x);
        Ok(self.pose_state_jacobian_with(&poses, frame, &poses[frame.0].translation.vector))
    }

    /// As [`Self::pose_state_jacobian`] but reusing precomputed frame
    /// poses and an explicit target point (e.g. a sphere center attached
    /// to `frame`).
    pub fn pose_state_jacobian_with(
        &self,
        poses: &[Isometry3<f64>],
        frame: FrameId,
        point: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(6, n);
        let z = Vector3::z();

        // Base translation columns.
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        // Base yaw column: rotation about the vertical axis through the
        // base origin.
        let base_origin = poses[0].translation.vector;
        let lever = point - base_origin;
        let lin = z.cross(&lever);
        for r in 0..3 {
            jac[(r, 2)] = lin[r];
            jac[(r + 3, 2)] = z[r];
        }

        // Ancestor joints of the frame.
        let mut cursor = frame;
        while let Some(parent) = self.frame_parent(cursor) {
            let joint_index = cursor.0 - 1;
            let joint = &self.joints[joint_index];
            let joint_iso = poses[parent.0] * joint.origin;
            let axis_world = joint_iso.rotation * joint.axis.into_inner();
            let col = 3 + joint_index;
            match joint.joint_type {
                JointType::Revolute => {
                    let lever = point - joint_iso.translation.vector;
                    let lin = axis_world.cross(&lever);
                    for r in 0..3 {
                        jac[(r, col)] = lin[r];
                        jac[(r + 3, col)] = axis_world[r];
                    }
                }
                JointType::Prismatic => {
                    for r in 0..3 {
                        jac[(r, col)] = axis_world[r];
                    }
                }
            }
            cursor = parent;
        }
        jac
    }

    /// Maps input rates to state rates: `ẋ = S(θ) u`, (3+n)×(2+n).
    pub fn input_to_state_map(&self, x: &StateVector) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.state_dim(), self.input_dim());
        let yaw = x.base_yaw();
        s[(0, 0)] = yaw.cos();
        s[(1, 0)] = yaw.sin();
        s[(2, 1)] = 1.0;
        for i in 0..self.arm_dof() {
            s[(3 + i, 2 + i)] = 1.0;
        }
        s
    }

    /// Geometric Jacobian mapping the input `(v, ω, q̇)` to the frame
    /// twist (inertial linear; angular) — 6×(2+n).
    pub fn frame_jacobian(
        &self,
        x: &StateVector,
        frame: FrameId,
    ) -> Result<DMatrix<f64>, ModelError> {
        Ok(self.pose_state_jacobian(x, frame)? * self.input_to_state_map(x))
    }
}
