//! Centroidal dynamics: the system momentum about the center of mass, the
//! centroidal momentum matrix (CMM) mapping generalized velocities to that
//! momentum, its limb decomposition, the velocity-product momentum rate, and
//! command-conditioned reference momenta.
//!
//! The centroidal frame is world-aligned with its origin at the instantaneous
//! COM; momenta are force-type spatial vectors [angular k; linear l] in that
//! frame.

use crate::model::{forward_kinematics, GeneralizedState, Kinematics, RobotModel};
use crate::spatial::{force_cross, motion_cross, SpatialForce, SpatialInertia, SpatialMotion};
use nalgebra::{DMatrix, DVector, Vector3};

/// Planar walking command: forward/lateral velocity and yaw rate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CommandVel {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl CommandVel {
    pub fn new(vx: f64, vy: f64, wz: f64) -> Self {
        Self { vx, vy, wz }
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.wz == 0.0
    }
}

/// Momentum split by the velocity-coordinate blocks that generate it.
#[derive(Clone, Copy, Debug)]
pub struct MomentumParts {
    pub base: SpatialForce,
    pub legs: SpatialForce,
    pub arms: SpatialForce,
}

impl MomentumParts {
    pub fn total(&self) -> SpatialForce {
        self.base + self.legs + self.arms
    }
}

/// Everything the locomotion stack needs per policy step, from one pass.
#[derive(Clone, Debug)]
pub struct CentroidalQuantities {
    pub com: Vector3<f64>,
    /// COM velocity, `l / m`.
    pub com_vel: Vector3<f64>,
    /// 6 x nv matrix: `h = cmm * qd` in the centroidal frame.
    pub cmm: DMatrix<f64>,
    pub h: SpatialForce,
    pub h_ref: SpatialForce,
    pub parts: MomentumParts,
}

/// Center of mass in world coordinates.
pub fn compute_com(model: &RobotModel, state: &GeneralizedState) -> Vector3<f64> {
    let kin = forward_kinematics(model, state);
    com_from_kinematics(model, &kin).0
}

fn com_from_kinematics(model: &RobotModel, kin: &Kinematics) -> (Vector3<f64>, f64) {
    let mut weighted = Vector3::zeros();
    let mut mass = 0.0;
    for (body, pose) in model.bodies().iter().zip(&kin.body_pose) {
        weighted += body.inertia.mass * pose.transform_point(&body.inertia.com);
        mass += body.inertia.mass;
    }
    (weighted / mass, mass)
}

/// World-frame spatial inertia (about the world origin) of every body.
fn world_inertias(model: &RobotModel, kin: &Kinematics) -> Vec<SpatialInertia> {
    model
        .bodies()
        .iter()
        .zip(&kin.body_pose)
        .map(|(b, pose)| pose.transform_inertia(&b.inertia))
        .collect()
}

/// Shifts a force-type vector from the world origin to the COM.
fn about_com(f: &SpatialForce, com: &Vector3<f64>) -> SpatialForce {
    SpatialForce::new(f.moment - com.cross(&f.force), f.force)
}

/// Centroidal momentum matrix: composite-rigid-body aggregation. Column `c`
/// is the momentum (about the COM) produced by unit velocity of coordinate
/// `c`, i.e. the composite inertia of the subtree moved by `c` applied to
/// that coordinate's motion subspace.
pub fn compute_cmm(model: &RobotModel, state: &GeneralizedState) -> DMatrix<f64> {
    let kin = forward_kinematics(model, state);
    cmm_from_kinematics(model, &kin)
}

fn cmm_from_kinematics(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let (com, _) = com_from_kinematics(model, kin);
    let mut composite = world_inertias(model, kin);
    for i in (1..model.bodies().len()).rev() {
        let parent = model.body(i).joint.parent.unwrap();
        let child = composite[i];
        composite[parent] = composite[parent].add(&child);
    }

    let mut cmm = DMatrix::zeros(6, model.nv());
    for c in 0..model.nv() {
        let body = model.coord_body(c);
        let col = about_com(&composite[body].momentum(&kin.coord_subspace[c]), &com);
        cmm.column_mut(c).copy_from(&col.to_vector6());
    }
    cmm
}

/// Total momentum about the COM via direct per-body summation. Serves as the
/// independent reference path for the CMM product.
pub fn momentum_brute_force(model: &RobotModel, state: &GeneralizedState) -> SpatialForce {
    let kin = forward_kinematics(model, state);
    let (com, _) = com_from_kinematics(model, &kin);
    let mut h = SpatialForce::zero();
    for (inertia, vel) in world_inertias(model, &kin).iter().zip(&kin.body_vel) {
        h += inertia.momentum(vel);
    }
    about_com(&h, &com)
}

/// Velocity-product momentum rate: the rate of change of the centroidal
/// momentum with all generalized accelerations held at zero. Computed from
/// the world-frame velocity-product accelerations and gyroscopic wrenches,
/// then shifted to the (moving) COM; the COM-velocity term vanishes because
/// the COM velocity is parallel to the linear momentum.
pub fn momentum_rate_bias(model: &RobotModel, state: &GeneralizedState) -> SpatialForce {
    let kin = forward_kinematics(model, state);
    let (com, _) = com_from_kinematics(model, &kin);
    let inertias = world_inertias(model, &kin);

    let nb = model.bodies().len();
    let mut accel = vec![SpatialMotion::zero(); nb];
    // Base coordinates are fixed in the base body, so with qdd = 0 the base's
    // world spatial acceleration v x v vanishes identically.
    for i in 1..nb {
        let parent = model.body(i).joint.parent.unwrap();
        let c = model.body_vel_coord(i);
        let joint_vel = kin.coord_subspace[c] * state.qd[c];
        accel[i] = accel[parent] + motion_cross(&kin.body_vel[i], &joint_vel);
    }

    let mut hdot = SpatialForce::zero();
    for i in 0..nb {
        hdot += inertias[i].momentum(&accel[i])
            + force_cross(&kin.body_vel[i], &inertias[i].momentum(&kin.body_vel[i]));
    }
    about_com(&hdot, &com)
}

/// Reference velocity in the coordinate ordering: zero except yaw rate and
/// planar base velocity taken from the command.
pub fn reference_velocity(model: &RobotModel, cmd: &CommandVel) -> DVector<f64> {
    let mut qd = DVector::zeros(model.nv());
    qd[2] = cmd.wz;
    qd[3] = cmd.vx;
    qd[4] = cmd.vy;
    qd
}

/// Command-conditioned reference momentum: the momentum the robot would carry
/// if the base tracked the command exactly with all limbs frozen.
pub fn reference_momentum(
    model: &RobotModel,
    state: &GeneralizedState,
    cmd: &CommandVel,
) -> SpatialForce {
    let cmm = compute_cmm(model, state);
    SpatialForce::from_vector6(&nalgebra::Vector6::from_iterator(
        (cmm * reference_velocity(model, cmd)).iter().copied(),
    ))
}

/// Splits the momentum by generator: base coordinates, leg joints, arm joints.
pub fn decompose_momentum(model: &RobotModel, state: &GeneralizedState) -> MomentumParts {
    let cmm = compute_cmm(model, state);
    parts_from_cmm(model, &cmm, &state.qd)
}

fn parts_from_cmm(model: &RobotModel, cmm: &DMatrix<f64>, qd: &DVector<f64>) -> MomentumParts {
    let block = |range: std::ops::Range<usize>| {
        let mut h = nalgebra::Vector6::zeros();
        for c in range {
            h += cmm.column(c) * qd[c];
        }
        SpatialForce::from_vector6(&h)
    };
    MomentumParts {
        base: block(model.base_coords()),
        legs: block(model.leg_coords()),
        arms: block(model.arm_coords()),
    }
}

impl CentroidalQuantities {
    /// One shared kinematics pass filling every field.
    pub fn compute(model: &RobotModel, state: &GeneralizedState, cmd: &CommandVel) -> Self {
        let kin = forward_kinematics(model, state);
        let (com, mass) = com_from_kinematics(model, &kin);
        let cmm = cmm_from_kinematics(model, &kin);
        let parts = parts_from_cmm(model, &cmm, &state.qd);
        let h = parts.total();
        let h_ref = SpatialForce::from_vector6(&nalgebra::Vector6::from_iterator(
            (&cmm * reference_velocity(model, cmd)).iter().copied(),
        ));
        Self {
            com,
            com_vel: h.force / mass,
            cmm,
            h,
            h_ref,
            parts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_model, mini_humanoid};
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SINGLE_BODY: &str = "\
body blob parent=WORLD joint=floating axis=0,0,1 origin_xyz=0,0,0 origin_rpy=0,0,0 mass=2.0 com=0.1,0,0.2 inertia=0.03,0.04,0.05,0,0,0 qlim=-1,1 vlim=10 taulim=10 limb=base
";

    fn random_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> GeneralizedState {
        let mut st = GeneralizedState::nominal(model);
        st.set_base_pos(Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.3..1.0),
        ));
        st.set_base_quat(UnitQuaternion::from_euler_angles(
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-3.0..3.0),
        ));
        for j in 0..model.n_joints() {
            st.q[7 + j] = rng.gen_range(-1.2..1.2);
        }
        for c in 0..model.nv() {
            st.qd[c] = rng.gen_range(-2.0..2.0);
        }
        st
    }

    #[test]
    fn single_spinning_body_momentum_is_com_inertia_times_omega() {
        let m = load_model(SINGLE_BODY).unwrap();
        let mut st = GeneralizedState::nominal(&m);
        st.qd[2] = 1.0; // yaw spin
        let q = CentroidalQuantities::compute(&m, &st, &CommandVel::default());
        // Spin about the frame origin: angular momentum about the COM is
        // I_com * w regardless of the COM offset, and the COM sweeps a circle
        // giving linear momentum m * (w x c).
        let i_com = m.body(0).inertia.com_inertia();
        let c = Vector3::new(0.1, 0.0, 0.2);
        assert_relative_eq!(q.h.moment, i_com * Vector3::z(), epsilon = 1e-12);
        assert_relative_eq!(q.h.force, 2.0 * Vector3::z().cross(&c), epsilon = 1e-12);
        assert_relative_eq!(q.com, c, epsilon = 1e-12);
    }

    #[test]
    fn com_matches_mass_weighted_positions() {
        let m = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let st = random_state(m, &mut rng);
        let kin = crate::model::forward_kinematics(m, &st);
        let mut acc = Vector3::zeros();
        for (b, pose) in m.bodies().iter().zip(&kin.body_pose) {
            acc += b.inertia.mass * (pose.rotation * b.inertia.com + pose.translation);
        }
        assert_relative_eq!(compute_com(m, &st), acc / 25.0, epsilon = 1e-12);
    }

    #[test]
    fn cmm_product_matches_per_body_momentum_sum() {
        let m = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let st = random_state(m, &mut rng);
            let h_cmm = compute_cmm(m, &st) * &st.qd;
            let h_direct = momentum_brute_force(m, &st).to_vector6();
            let scale = h_direct.norm().max(1.0);
            assert!((h_cmm - h_direct).norm() / scale < 1e-9);
        }
    }

    #[test]
    fn decomposition_sums_to_total() {
        let m = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let st = random_state(m, &mut rng);
            let parts = decompose_momentum(m, &st);
            let total = compute_cmm(m, &st) * &st.qd;
            assert!((parts.total().to_vector6() - total).norm() < 1e-10);
        }
    }

    #[test]
    fn arm_block_ignores_leg_motion() {
        let m = mini_humanoid();
        let mut st = GeneralizedState::nominal(m);
        for c in m.leg_coords() {
            st.qd[c] = 1.5;
        }
        let parts = decompose_momentum(m, &st);
        assert_relative_eq!(parts.arms.to_vector6().norm(), 0.0, epsilon = 1e-12);
        assert!(parts.legs.to_vector6().norm() > 1e-3);
    }

    #[test]
    fn bias_matches_central_difference_of_momentum() {
        let m = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let st = random_state(m, &mut rng);
            let analytic = momentum_rate_bias(m, &st).to_vector6();
            let dt = 1e-6;
            let plus = momentum_brute_force(m, &st.integrate(dt)).to_vector6();
            let minus = momentum_brute_force(m, &st.integrate(-dt)).to_vector6();
            let fd = (plus - minus) / (2.0 * dt);
            assert!(
                (analytic - fd).norm() < 1e-4 * fd.norm().max(1.0),
                "bias mismatch: analytic {analytic:?} fd {fd:?}"
            );
        }
    }

    #[test]
    fn pendulum_bias_matches_finite_difference() {
        // Anchored base, one revolute joint spinning at constant rate.
        let text = "\
body anchor parent=WORLD joint=floating axis=0,0,1 origin_xyz=0,0,0 origin_rpy=0,0,0 mass=50.0 com=0,0,0 inertia=1,1,1,0,0,0 qlim=-1,1 vlim=10 taulim=10 limb=base
body rod parent=anchor joint=revolute axis=0,1,0 origin_xyz=0.2,0,0 origin_rpy=0,0,0 mass=1.0 com=0,0,-0.3 inertia=0.03,0.03,0.001,0,0,0 qlim=-1.6,1.6 vlim=20 taulim=20 limb=leg
";
        let m = load_model(text).unwrap();
        let mut st = GeneralizedState::nominal(&m);
        st.q[7] = 0.7;
        st.qd[6] = 2.0;
        let analytic = momentum_rate_bias(&m, &st).to_vector6();
        let dt = 1e-6;
        let fd = (momentum_brute_force(&m, &st.integrate(dt)).to_vector6()
            - momentum_brute_force(&m, &st.integrate(-dt)).to_vector6())
            / (2.0 * dt);
        assert!((analytic - fd).norm() < 1e-5 * fd.norm().max(1.0));
    }

    #[test]
    fn zero_command_reference_momentum_is_exactly_zero() {
        let m = mini_humanoid();
        let st = GeneralizedState::nominal(m);
        let h = reference_momentum(m, &st, &CommandVel::default());
        assert_eq!(h.to_vector6(), nalgebra::Vector6::zeros());
    }

    #[test]
    fn reference_momentum_equals_command_weighted_columns() {
        let m = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let st = random_state(m, &mut rng);
        let cmd = CommandVel::new(0.7, -0.3, 1.1);
        let cmm = compute_cmm(m, &st);
        let expect = cmm.column(2) * cmd.wz + cmm.column(3) * cmd.vx + cmm.column(4) * cmd.vy;
        let got = reference_momentum(m, &st, &cmd).to_vector6();
        assert!((got - expect).norm() < 1e-12);
    }

    #[test]
    fn positive_yaw_command_gives_positive_vertical_cam() {
        let m = mini_humanoid();
        let st = GeneralizedState::nominal(m);
        let h = reference_momentum(m, &st, &CommandVel::new(0.0, 0.0, 1.0));
        assert!(h.moment.z > 0.05, "k_z = {}", h.moment.z);
    }

    #[test]
    fn world_yaw_rotates_momentum_components() {
        let m = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let st = random_state(m, &mut rng);
        let h0 = momentum_brute_force(m, &st);

        for theta in [std::f64::consts::FRAC_PI_2, std::f64::consts::PI] {
            let rot = UnitQuaternion::from_euler_angles(0.0, 0.0, theta);
            let mut st2 = st.clone();
            st2.set_base_quat(rot * st.base_quat());
            st2.set_base_pos(rot.to_rotation_matrix() * st.base_pos());
            let h = momentum_brute_force(m, &st2);
            let r = rot.to_rotation_matrix();
            assert_relative_eq!(h.moment, r * h0.moment, epsilon = 1e-9);
            assert_relative_eq!(h.force, r * h0.force, epsilon = 1e-9);
        }
    }
}
