//! Robot model document parsing and validation.
//!
//! Documents are TOML with the following sections (see
//! `assets/default_robot.toml` for the canonical example):
//!
//! ```toml
//! end_effector = "arm_6"
//! self_collision_pairs = [[0, 3], [0, 4]]
//!
//! [base]
//! type = "diff_drive"        # only supported base type
//! height = 0.25              # base frame origin height above floor, m
//! radius = 0.30              # circumscribed footprint radius, m
//! limit_vel_lin = 0.6        # |v| bound, m/s
//! limit_vel_ang = 1.2        # |ω| bound, rad/s
//!
//! [[joint]]
//! name = "arm_1"
//! type = "revolute"          # or "prismatic"
//! axis = [0.0, 0.0, 1.0]     # unit vector in the joint frame
//! origin_xyz = [0.15, 0.0, 0.20]
//! origin_rpy = [0.0, 0.0, 0.0]
//! parent = "base"            # "base" or another joint name
//! limits_pos = [-2.9, 2.9]   # rad or m
//! limit_vel = 1.5            # rad/s or m/s
//!
//! [[sphere]]
//! frame = "arm_1"
//! offset_xyz = [0.0, 0.0, 0.05]
//! radius = 0.12
//! ```
//!
//! Top-level keys (`end_effector`, `self_collision_pairs`) must precede
//! the first section header. Sphere indices refer to `[[sphere]]` entries
//! in document order.

use nalgebra::{Isometry3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::Deserialize;

use super::{CollisionSphere, FrameId, Joint, JointType, ModelError, RobotModel};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    base: BaseSection,
    #[serde(default, rename = "joint")]
    joints: Vec<JointSection>,
    #[serde(default, rename = "sphere")]
    spheres: Vec<SphereSection>,
    #[serde(default)]
    self_collision_pairs: Vec<[usize; 2]>,
    end_effector: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseSection {
    #[serde(rename = "type")]
    base_type: String,
    height: f64,
    radius: f64,
    limit_vel_lin: f64,
    limit_vel_ang: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSection {
    name: String,
    #[serde(rename = "type")]
    joint_type: String,
    axis: [f64; 3],
    origin_xyz: [f64; 3],
    origin_rpy: [f64; 3],
    parent: String,
    limits_pos: [f64; 2],
    limit_vel: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereSection {
    frame: String,
    offset_xyz: [f64; 3],
    radius: f64,
}

/// Parses and validates a robot model document.
pub fn load_robot_model(text: &str) -> Result<RobotModel, ModelError> {
    let doc: Document = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;

    if doc.base.base_type != "diff_drive" {
        return Err(ModelError::BadBase(format!(
            "unsupported base type `{}`",
            doc.base.base_type
        )));
    }
    if !(doc.base.height.is_finite() && doc.base.height >= 0.0) {
        return Err(ModelError::BadBase("height must be non-negative".into()));
    }
    if !(doc.base.radius > 0.0) {
        return Err(ModelError::BadBase("radius must be positive".into()));
    }
    if !(doc.base.limit_vel_lin > 0.0 && doc.base.limit_vel_ang > 0.0) {
        return Err(ModelError::BadBase("velocity limits must be positive".into()));
    }

    // Duplicate names, including the reserved base name.
    let mut names: Vec<&str> = Vec::with_capacity(doc.joints.len());
    for j in &doc.joints {
        if j.name == "base" || names.contains(&j.name.as_str()) {
            return Err(ModelError::DuplicateJoint(j.name.clone()));
        }
        names.push(&j.name);
    }

    // Resolve parents by name; documents may reference joints in any
    // order, so first build the raw parent indices.
    let frame_id_of = |name: &str| -> Result<FrameId, ModelError> {
        if name == "base" {
            return Ok(FrameId::BASE);
        }
        names
            .iter()
            .position(|n| *n == name)
            .map(|i| FrameId(i + 1))
            .ok_or_else(|| ModelError::UnknownFrame(name.to_string()))
    };

    let mut parents = Vec::with_capacity(doc.joints.len());
    for j in &doc.joints {
        parents.push(frame_id_of(&j.parent)?);
    }

    // Cycle detection: walk each joint's ancestry; more hops than frames
    // means the parent pointers loop.
    for (i, j) in doc.joints.iter().enumerate() {
        let mut cursor = parents[i];
        let mut hops = 0usize;
        while cursor != FrameId::BASE {
            cursor = parents[cursor.0 - 1];
            hops += 1;
            if hops > doc.joints.len() {
                return Err(ModelError::Cycle(j.name.clone()));
            }
        }
    }

    let mut joints = Vec::with_capacity(doc.joints.len());
    for (i, j) in doc.joints.iter().enumerate() {
        let joint_type = match j.joint_type.as_str() {
            "revolute" => JointType::Revolute,
            "prismatic" => JointType::Prismatic,
            other => {
                return Err(ModelError::Parse(format!(
                    "joint `{}`: unknown type `{}`",
                    j.name, other
                )))
            }
        };
        let axis = Vector3::from(j.axis);
        let norm = axis.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(ModelError::NonUnitAxis(j.name.clone(), norm));
        }
        if j.limits_pos[0] >= j.limits_pos[1] {
            return Err(ModelError::BadLimits(j.name.clone()));
        }
        if !(j.limit_vel > 0.0) {
            return Err(ModelError::BadVelocityLimit(j.name.clone()));
        }
        let rot = Rotation3::from_euler_angles(j.origin_rpy[0], j.origin_rpy[1], j.origin_rpy[2]);
        joints.push(Joint {
            name: j.name.clone(),
            joint_type,
            axis: Unit::new_normalize(axis),
            origin: Isometry3::from_parts(
                Translation3::from(Vector3::from(j.origin_xyz)),
                UnitQuaternion::from_rotation_matrix(&rot),
            ),
            parent: parents[i],
            pos_limits: (j.limits_pos[0], j.limits_pos[1]),
            vel_limit: j.limit_vel,
        });
    }

    let mut spheres = Vec::with_capacity(doc.spheres.len());
    for (i, s) in doc.spheres.iter().enumerate() {
        if !(s.radius > 0.0) {
            return Err(ModelError::BadRadius(i));
        }
        spheres.push(CollisionSphere {
            frame: frame_id_of(&s.frame)?,
            offset: Vector3::from(s.offset_xyz),
            radius: s.radius,
        });
    }

    // Self-collision pairs must reference valid spheres and must not sit
    // on the same or directly connected links.
    let parent_of = |f: FrameId| -> Option<FrameId> {
        if f.0 == 0 {
            None
        } else {
            Some(parents[f.0 - 1])
        }
    };
    let mut pairs = Vec::with_capacity(doc.self_collision_pairs.len());
    for &[a, b] in &doc.self_collision_pairs {
        if a >= spheres.len() || b >= spheres.len() {
            return Err(ModelError::BadCollisionPair(a, b, "sphere index out of range".into()));
        }
        if a == b {
            return Err(ModelError::BadCollisionPair(a, b, "pair references one sphere".into()));
        }
        let fa = spheres[a].frame;
        let fb = spheres[b].frame;
        let adjacent =
            fa == fb || parent_of(fa) == Some(fb) || parent_of(fb) == Some(fa);
        if adjacent {
            return Err(ModelError::BadCollisionPair(
                a,
                b,
                "spheres sit on the same or adjacent links".into(),
            ));
        }
        pairs.push((a, b));
    }

    let model = RobotModel {
        base_height: doc.base.height,
        base_radius: doc.base.radius,
        base_lin_vel_limit: doc.base.limit_vel_lin,
        base_ang_vel_limit: doc.base.limit_vel_ang,
        joints,
        spheres,
        self_collision_pairs: pairs,
        end_effector: FrameId::BASE,
    };
    let end_effector = model.frame(&doc.end_effector)?;
    Ok(RobotModel {
        end_effector,
        ..model
    })
}
