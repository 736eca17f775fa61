//! Kinematic-tree robot model: a single floating base plus revolute joints,
//! each tagged with the limb it belongs to, loaded from a line-oriented text
//! format.
//!
//! Generalized coordinates: `q = [base position (3), base quaternion (w,x,y,z),
//! joint angles (n)]`, `qd = [base angular velocity (3), base linear velocity
//! (3), joint rates (n)]` with the base velocities expressed in the base frame
//! and joint rates ordered legs first, then arms.
//!
//! Model file format, one `body` line per link (fields in any order):
//!
//! ```text
//! body <name> parent=<name|WORLD> joint=<revolute|floating> axis=<x,y,z>
//!      origin_xyz=<x,y,z> origin_rpy=<r,p,y> mass=<kg> com=<x,y,z>
//!      inertia=<ixx,iyy,izz,ixy,ixz,iyz> qlim=<lo,hi> vlim=<v> taulim=<t>
//!      limb=<base|leg|arm>
//! nominal <joint-name>=<rad>
//! ```
//!
//! `#` starts a comment. `inertia` is about the link COM (body axes); the
//! loader shifts it to the body origin. Parents must be declared before
//! children and the floating base must be the first body.

use crate::spatial::{PluckerTransform, SpatialInertia, SpatialMotion};
use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3, Vector6};
use std::collections::HashMap;
use std::sync::OnceLock;
use thiserror::Error;

const MINI_HUMANOID_TEXT: &str = include_str!("assets/mini_humanoid.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointType {
    Revolute,
    FloatingBase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Limb {
    Base,
    Leg,
    Arm,
}

impl Limb {
    fn rank(self) -> usize {
        match self {
            Limb::Base => 0,
            Limb::Leg => 1,
            Limb::Arm => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointSpec {
    pub name: String,
    /// Index of the parent body; `None` for the floating base.
    pub parent: Option<usize>,
    pub joint_type: JointType,
    /// Rotation axis in the child body frame (unit length).
    pub axis: Vector3<f64>,
    /// Fixed transform from the joint frame (at zero angle) to the parent frame.
    pub origin: PluckerTransform,
    pub origin_xyz: Vector3<f64>,
    pub origin_rpy: Vector3<f64>,
    pub q_limits: (f64, f64),
    pub vel_limit: f64,
    pub torque_limit: f64,
    pub limb: Limb,
}

#[derive(Clone, Debug)]
pub struct Body {
    pub joint: JointSpec,
    pub inertia: SpatialInertia,
    /// COM-frame inertia as authored, kept for serialization.
    com_inertia: Matrix3<f64>,
}

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown parent body `{name}` (parents must be declared first)")]
    UnknownParent { line: usize, name: String },
    #[error("line {line}: duplicate body name `{name}`")]
    DuplicateBody { line: usize, name: String },
    #[error("line {line}: {msg}")]
    BadValue { line: usize, msg: String },
    #[error("model must declare exactly one floating base as its first body")]
    BadBase,
    #[error("nominal angle for unknown joint `{name}`")]
    UnknownNominalJoint { name: String },
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    bodies: Vec<Body>,
    pub n_leg: usize,
    pub n_arm: usize,
    /// Per velocity coordinate: the body it drives (coordinates 0..6 are the base).
    coord_body: Vec<usize>,
    /// Per body: its joint's velocity coordinate (base body maps to 0).
    body_coord: Vec<usize>,
    /// Nominal joint angles in joint-coordinate order.
    pub q_ref: DVector<f64>,
}

impl RobotModel {
    pub fn n_joints(&self) -> usize {
        self.n_leg + self.n_arm
    }

    pub fn nv(&self) -> usize {
        6 + self.n_joints()
    }

    pub fn nq(&self) -> usize {
        7 + self.n_joints()
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn body(&self, i: usize) -> &Body {
        &self.bodies[i]
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.joint.name == name)
    }

    /// Velocity coordinate of the joint driving body `i` (body 0 returns 0).
    pub fn body_vel_coord(&self, i: usize) -> usize {
        self.body_coord[i]
    }

    /// Joint-coordinate index (0-based among joints) for body `i`'s joint.
    pub fn body_joint_index(&self, i: usize) -> usize {
        self.body_coord[i] - 6
    }

    /// Body driven by velocity coordinate `c`.
    pub fn coord_body(&self, c: usize) -> usize {
        self.coord_body[c]
    }

    pub fn limb_of_coord(&self, c: usize) -> Limb {
        if c < 6 {
            Limb::Base
        } else {
            self.bodies[self.coord_body[c]].joint.limb
        }
    }

    pub fn base_coords(&self) -> std::ops::Range<usize> {
        0..6
    }

    pub fn leg_coords(&self) -> std::ops::Range<usize> {
        6..6 + self.n_leg
    }

    pub fn arm_coords(&self) -> std::ops::Range<usize> {
        6 + self.n_leg..self.nv()
    }

    /// Splits a generalized velocity into (base, legs, arms) blocks.
    pub fn partition_velocity(
        &self,
        qd: &DVector<f64>,
    ) -> (Vector6<f64>, DVector<f64>, DVector<f64>) {
        assert_eq!(qd.len(), self.nv());
        (
            Vector6::from_iterator(qd.rows(0, 6).iter().copied()),
            DVector::from_iterator(self.n_leg, qd.rows(6, self.n_leg).iter().copied()),
            DVector::from_iterator(
                self.n_arm,
                qd.rows(6 + self.n_leg, self.n_arm).iter().copied(),
            ),
        )
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.inertia.mass).sum()
    }

    pub fn limb_mass(&self, limb: Limb) -> f64 {
        self.bodies
            .iter()
            .filter(|b| b.joint.limb == limb)
            .map(|b| b.inertia.mass)
            .sum()
    }

    /// Joint limit vectors in joint-coordinate order: (lo, hi, vel, torque).
    pub fn joint_limits(&self) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.n_joints();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        let mut vel = DVector::zeros(n);
        let mut tau = DVector::zeros(n);
        for (i, b) in self.bodies.iter().enumerate().skip(1) {
            let j = self.body_joint_index(i);
            lo[j] = b.joint.q_limits.0;
            hi[j] = b.joint.q_limits.1;
            vel[j] = b.joint.vel_limit;
            tau[j] = b.joint.torque_limit;
        }
        (lo, hi, vel, tau)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.bodies {
            let j = &b.joint;
            let parent = match j.parent {
                None => "WORLD".to_string(),
                Some(p) => self.bodies[p].joint.name.clone(),
            };
            let jt = match j.joint_type {
                JointType::Revolute => "revolute",
                JointType::FloatingBase => "floating",
            };
            let limb = match j.limb {
                Limb::Base => "base",
                Limb::Leg => "leg",
                Limb::Arm => "arm",
            };
            let i = &b.com_inertia;
            out.push_str(&format!(
                "body {} parent={} joint={} axis={},{},{} origin_xyz={},{},{} origin_rpy={},{},{} \
                 mass={} com={},{},{} inertia={},{},{},{},{},{} qlim={},{} vlim={} taulim={} limb={}\n",
                j.name, parent, jt,
                j.axis.x, j.axis.y, j.axis.z,
                j.origin_xyz.x, j.origin_xyz.y, j.origin_xyz.z,
                j.origin_rpy.x, j.origin_rpy.y, j.origin_rpy.z,
                b.inertia.mass,
                b.inertia.com.x, b.inertia.com.y, b.inertia.com.z,
                i[(0, 0)], i[(1, 1)], i[(2, 2)], i[(0, 1)], i[(0, 2)], i[(1, 2)],
                j.q_limits.0, j.q_limits.1, j.vel_limit, j.torque_limit, limb,
            ));
        }
        for (i, b) in self.bodies.iter().enumerate().skip(1) {
            let q = self.q_ref[self.body_joint_index(i)];
            if q != 0.0 {
                out.push_str(&format!("nominal {}={}\n", b.joint.name, q));
            }
        }
        out
    }
}

fn parse_floats<const N: usize>(s: &str, line: usize, field: &str) -> Result<[f64; N], ModelError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != N {
        return Err(ModelError::Syntax {
            line,
            msg: format!("field `{field}` expects {N} comma-separated values"),
        });
    }
    let mut out = [0.0; N];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.trim().parse::<f64>().map_err(|_| ModelError::Syntax {
            line,
            msg: format!("bad number `{p}` in field `{field}`"),
        })?;
    }
    Ok(out)
}

/// Parses a robot model from the text format described in the module docs.
pub fn load_model(text: &str) -> Result<RobotModel, ModelError> {
    let mut bodies: Vec<Body> = Vec::new();
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut nominal: Vec<(String, f64)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("body") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| ModelError::Syntax {
                        line,
                        msg: "body line missing a name".into(),
                    })?
                    .to_string();
                if names.contains_key(&name) {
                    return Err(ModelError::DuplicateBody { line, name });
                }
                let mut fields: HashMap<&str, &str> = HashMap::new();
                for tok in tokens {
                    let (k, v) = tok.split_once('=').ok_or_else(|| ModelError::Syntax {
                        line,
                        msg: format!("expected key=value, got `{tok}`"),
                    })?;
                    fields.insert(k, v);
                }
                let get = |k: &str| -> Result<&str, ModelError> {
                    fields.get(k).copied().ok_or_else(|| ModelError::Syntax {
                        line,
                        msg: format!("missing field `{k}`"),
                    })
                };

                let parent_name = get("parent")?;
                let parent = if parent_name == "WORLD" {
                    None
                } else {
                    Some(*names.get(parent_name).ok_or_else(|| {
                        ModelError::UnknownParent {
                            line,
                            name: parent_name.to_string(),
                        }
                    })?)
                };
                let joint_type = match get("joint")? {
                    "revolute" => JointType::Revolute,
                    "floating" => JointType::FloatingBase,
                    other => {
                        return Err(ModelError::Syntax {
                            line,
                            msg: format!("unknown joint type `{other}`"),
                        })
                    }
                };
                let axis_raw = parse_floats::<3>(get("axis")?, line, "axis")?;
                let axis = Vector3::from(axis_raw);
                if joint_type == JointType::Revolute && axis.norm() < 1e-9 {
                    return Err(ModelError::BadValue {
                        line,
                        msg: "revolute axis must be non-zero".into(),
                    });
                }
                let xyz = Vector3::from(parse_floats::<3>(get("origin_xyz")?, line, "origin_xyz")?);
                let rpy = Vector3::from(parse_floats::<3>(get("origin_rpy")?, line, "origin_rpy")?);
                let mass: f64 = get("mass")?.parse().map_err(|_| ModelError::Syntax {
                    line,
                    msg: "bad number in field `mass`".into(),
                })?;
                if mass <= 0.0 {
                    return Err(ModelError::BadValue {
                        line,
                        msg: format!("mass must be positive, got {mass}"),
                    });
                }
                let com = Vector3::from(parse_floats::<3>(get("com")?, line, "com")?);
                let [ixx, iyy, izz, ixy, ixz, iyz] =
                    parse_floats::<6>(get("inertia")?, line, "inertia")?;
                let i_com = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
                if i_com.symmetric_eigenvalues().iter().any(|&e| e < -1e-9) {
                    return Err(ModelError::BadValue {
                        line,
                        msg: "COM inertia must be positive semi-definite".into(),
                    });
                }
                let [qlo, qhi] = parse_floats::<2>(get("qlim")?, line, "qlim")?;
                if qlo >= qhi {
                    return Err(ModelError::BadValue {
                        line,
                        msg: format!("qlim lower bound {qlo} must be below upper bound {qhi}"),
                    });
                }
                let vlim: f64 = get("vlim")?.parse().map_err(|_| ModelError::Syntax {
                    line,
                    msg: "bad number in field `vlim`".into(),
                })?;
                let taulim: f64 = get("taulim")?.parse().map_err(|_| ModelError::Syntax {
                    line,
                    msg: "bad number in field `taulim`".into(),
                })?;
                if vlim <= 0.0 || taulim <= 0.0 {
                    return Err(ModelError::BadValue {
                        line,
                        msg: "vlim and taulim must be positive".into(),
                    });
                }
                let limb = match get("limb")? {
                    "base" => Limb::Base,
                    "leg" => Limb::Leg,
                    "arm" => Limb::Arm,
                    other => {
                        return Err(ModelError::Syntax {
                            line,
                            msg: format!("unknown limb tag `{other}`"),
                        })
                    }
                };

                let is_first = bodies.is_empty();
                match joint_type {
                    JointType::FloatingBase => {
                        if !is_first || parent.is_some() || limb != Limb::Base {
                            return Err(ModelError::BadBase);
                        }
                    }
                    JointType::Revolute => {
                        if is_first || parent.is_none() {
                            return Err(ModelError::BadBase);
                        }
                        if limb == Limb::Base {
                            return Err(ModelError::BadValue {
                                line,
                                msg: "revolute joints must be tagged leg or arm".into(),
                            });
                        }
                    }
                }

                names.insert(name.clone(), bodies.len());
                bodies.push(Body {
                    joint: JointSpec {
                        name,
                        parent,
                        joint_type,
                        axis: if axis.norm() > 0.0 { axis.normalize() } else { axis },
                        origin: PluckerTransform::from_xyz_rpy(xyz, rpy),
                        origin_xyz: xyz,
                        origin_rpy: rpy,
                        q_limits: (qlo, qhi),
                        vel_limit: vlim,
                        torque_limit: taulim,
                        limb,
                    },
                    inertia: SpatialInertia::from_com_inertia(mass, com, i_com),
                    com_inertia: i_com,
                });
            }
            Some("nominal") => {
                let rest = content.trim_start_matches("nominal").trim();
                let (name, val) = rest.split_once('=').ok_or_else(|| ModelError::Syntax {
                    line,
                    msg: "nominal line expects `nominal <joint>=<rad>`".into(),
                })?;
                let angle: f64 = val.trim().parse().map_err(|_| ModelError::Syntax {
                    line,
                    msg: format!("bad nominal angle `{val}`"),
                })?;
                nominal.push((name.trim().to_string(), angle));
            }
            Some(other) => {
                return Err(ModelError::Syntax {
                    line,
                    msg: format!("unknown directive `{other}`"),
                })
            }
            None => {}
        }
    }

    if bodies.is_empty() || bodies[0].joint.joint_type != JointType::FloatingBase {
        return Err(ModelError::BadBase);
    }

    // Assign velocity coordinates: base takes 0..6, then legs, then arms.
    let mut joint_order: Vec<usize> = (1..bodies.len()).collect();
    joint_order.sort_by_key(|&i| (bodies[i].joint.limb.rank(), i));
    let n_leg = bodies.iter().filter(|b| b.joint.limb == Limb::Leg).count();
    let n_arm = bodies.iter().filter(|b| b.joint.limb == Limb::Arm).count();

    let mut body_coord = vec![0usize; bodies.len()];
    let mut coord_body = vec![0usize; 6 + joint_order.len()];
    for (k, &bi) in joint_order.iter().enumerate() {
        body_coord[bi] = 6 + k;
        coord_body[6 + k] = bi;
    }

    let mut q_ref = DVector::zeros(n_leg + n_arm);
    for (name, angle) in nominal {
        let bi = *names
            .get(&name)
            .ok_or(ModelError::UnknownNominalJoint { name: name.clone() })?;
        if bi == 0 {
            return Err(ModelError::UnknownNominalJoint { name });
        }
        q_ref[body_coord[bi] - 6] = angle;
    }

    Ok(RobotModel {
        bodies,
        n_leg,
        n_arm,
        coord_body,
        body_coord,
        q_ref,
    })
}

/// The bundled desk-scale humanoid (25 kg, 8 leg + 6 arm joints).
pub fn mini_humanoid() -> &'static RobotModel {
    static MODEL: OnceLock<RobotModel> = OnceLock::new();
    MODEL.get_or_init(|| load_model(MINI_HUMANOID_TEXT).expect("bundled model must parse"))
}

pub fn mini_humanoid_text() -> &'static str {
    MINI_HUMANOID_TEXT
}

/// Full configuration and velocity of the tree.
#[derive(Clone, Debug)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl GeneralizedState {
    /// Base at the world origin with identity orientation, joints at nominal.
    pub fn nominal(model: &RobotModel) -> Self {
        let mut q = DVector::zeros(model.nq());
        q[3] = 1.0;
        q.rows_mut(7, model.n_joints()).copy_from(&model.q_ref);
        Self {
            q,
            qd: DVector::zeros(model.nv()),
        }
    }

    pub fn base_pos(&self) -> Vector3<f64> {
        Vector3::new(self.q[0], self.q[1], self.q[2])
    }

    pub fn set_base_pos(&mut self, p: Vector3<f64>) {
        self.q[0] = p.x;
        self.q[1] = p.y;
        self.q[2] = p.z;
    }

    pub fn base_quat(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            self.q[3], self.q[4], self.q[5], self.q[6],
        ))
    }

    pub fn set_base_quat(&mut self, quat: UnitQuaternion<f64>) {
        self.q[3] = quat.w;
        self.q[4] = quat.i;
        self.q[5] = quat.j;
        self.q[6] = quat.k;
    }

    pub fn base_rot(&self) -> Matrix3<f64> {
        self.base_quat().to_rotation_matrix().into_inner()
    }

    /// Heading (yaw) of the base, extrinsic Z after XY.
    pub fn yaw(&self) -> f64 {
        self.base_quat().euler_angles().2
    }

    pub fn base_pose(&self) -> PluckerTransform {
        PluckerTransform::new(self.base_rot(), self.base_pos())
    }

    /// Base angular velocity in base coordinates.
    pub fn base_ang_vel(&self) -> Vector3<f64> {
        Vector3::new(self.qd[0], self.qd[1], self.qd[2])
    }

    /// Base linear velocity in base coordinates.
    pub fn base_lin_vel(&self) -> Vector3<f64> {
        Vector3::new(self.qd[3], self.qd[4], self.qd[5])
    }

    pub fn joint_q(&self, model: &RobotModel) -> DVector<f64> {
        self.q.rows(7, model.n_joints()).into_owned()
    }

    pub fn joint_qd(&self, model: &RobotModel) -> DVector<f64> {
        self.qd.rows(6, model.n_joints()).into_owned()
    }

    /// Advances positions by `dt` holding `self.qd` fixed: the base quaternion
    /// via the exponential map of the body-frame angular velocity, the base
    /// position from the body-frame linear velocity, joints linearly.
    pub fn integrate(&self, dt: f64) -> GeneralizedState {
        self.integrate_with(&self.qd, dt)
    }

    pub fn integrate_with(&self, qd: &DVector<f64>, dt: f64) -> GeneralizedState {
        let rot = self.base_quat();
        let omega = Vector3::new(qd[0], qd[1], qd[2]);
        let vel = Vector3::new(qd[3], qd[4], qd[5]);
        let new_rot =
            UnitQuaternion::from_quaternion(rot.quaternion() * UnitQuaternion::from_scaled_axis(omega * dt).quaternion())
                .into_inner();
        let new_pos = self.base_pos() + rot.to_rotation_matrix() * vel * dt;

        let mut q = self.q.clone();
        q[0] = new_pos.x;
        q[1] = new_pos.y;
        q[2] = new_pos.z;
        q[3] = new_rot.w;
        q[4] = new_rot.i;
        q[5] = new_rot.j;
        q[6] = new_rot.k;
        for i in 7..q.len() {
            q[i] += qd[i - 1] * dt;
        }
        GeneralizedState { q, qd: qd.clone() }
    }
}

/// Poses, world-frame twists, and per-coordinate motion subspaces for a state.
/// Twists and subspaces are expressed in world coordinates about the world
/// origin.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub body_pose: Vec<PluckerTransform>,
    pub body_vel: Vec<SpatialMotion>,
    pub coord_subspace: Vec<SpatialMotion>,
}

pub fn forward_kinematics(model: &RobotModel, state: &GeneralizedState) -> Kinematics {
    let nb = model.bodies().len();
    let mut body_pose = Vec::with_capacity(nb);
    let mut body_vel = Vec::with_capacity(nb);
    let mut coord_subspace = vec![SpatialMotion::zero(); model.nv()];

    let base_pose = state.base_pose();
    let r = base_pose.rotation;
    let p = base_pose.translation;
    for k in 0..3 {
        let col = r.column(k).into_owned();
        coord_subspace[k] = SpatialMotion::new(col, p.cross(&col));
        coord_subspace[3 + k] = SpatialMotion::new(Vector3::zeros(), col);
    }
    let mut base_vel = SpatialMotion::zero();
    for k in 0..6 {
        base_vel += coord_subspace[k] * state.qd[k];
    }
    body_pose.push(base_pose);
    body_vel.push(base_vel);

    for i in 1..nb {
        let joint = &model.body(i).joint;
        let parent = joint.parent.expect("non-base bodies have parents");
        let coord = model.body_vel_coord(i);
        let angle = state.q[7 + (coord - 6)];
        let pose = body_pose[parent]
            .compose(&joint.origin)
            .compose(&PluckerTransform::from_axis_angle(&joint.axis, angle));
        let axis_w = pose.rotation * joint.axis;
        let s = SpatialMotion::new(axis_w, pose.translation.cross(&axis_w));
        coord_subspace[coord] = s;
        body_vel.push(body_vel[parent] + s * state.qd[coord]);
        body_pose.push(pose);
    }

    Kinematics {
        body_pose,
        body_vel,
        coord_subspace,
    }
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn integration_keeps_quaternion_unit(
            wx in -5.0..5.0f64, wy in -5.0..5.0f64, wz in -5.0..5.0f64, steps in 1usize..200
        ) {
            let m = mini_humanoid();
            let mut st = GeneralizedState::nominal(m);
            st.qd[0] = wx;
            st.qd[1] = wy;
            st.qd[2] = wz;
            for _ in 0..steps {
                st = st.integrate(1e-2);
            }
            prop_assert!((st.base_quat().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn partition_concatenation_is_identity(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let m = mini_humanoid();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let qd = DVector::from_iterator(m.nv(), (0..m.nv()).map(|_| rng.gen_range(-2.0..2.0)));
            let (base, legs, arms) = m.partition_velocity(&qd);
            let mut rebuilt = DVector::zeros(m.nv());
            rebuilt.rows_mut(0, 6).copy_from(&base);
            rebuilt.rows_mut(6, m.n_leg).copy_from(&legs);
            rebuilt.rows_mut(6 + m.n_leg, m.n_arm).copy_from(&arms);
            prop_assert_eq!(rebuilt, qd);
        }
    }
}
