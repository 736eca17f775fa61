//! Fixed-step rigid-body simulation with toe/heel penalty contacts, external
//! disturbance wrenches, and ground-reaction-moment / center-of-pressure
//! extraction.
//!
//! Dynamics are assembled in world coordinates about the world origin: the
//! mass matrix by composite-rigid-body aggregation over the same motion
//! subspaces used for kinematics, the bias vector by a velocity-product pass
//! with gravity and contact/external wrenches folded in. Integration is
//! semi-implicit Euler at a fixed step (velocity first, then positions, with
//! the base quaternion advanced by the exponential map).

use crate::model::{forward_kinematics, GeneralizedState, RobotModel};
use crate::spatial::{force_cross, motion_cross, SpatialForce, SpatialInertia, SpatialMotion};
use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use std::sync::Arc;
use thiserror::Error;

pub const GRAVITY: f64 = 9.81;
/// Normal force below which a point is not considered in contact.
pub const CONTACT_FORCE_MIN: f64 = 1.0;
/// Any |qd| component beyond this marks the state terminal-invalid.
pub const VELOCITY_EXPLOSION_LIMIT: f64 = 1e4;

const FOOT_HALF_LENGTH: f64 = 0.07;
const FOOT_SOLE_DROP: f64 = 0.04;

#[derive(Clone, Copy, Debug)]
pub struct ContactParams {
    /// Normal penalty stiffness (N/m).
    pub k_normal: f64,
    /// Normal penalty damping (N·s/m).
    pub d_normal: f64,
    /// Coulomb friction coefficient.
    pub friction: f64,
    /// Viscous tangential gain before the friction cap (N·s/m).
    pub tangent_gain: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            k_normal: 30_000.0,
            d_normal: 300.0,
            friction: 0.8,
            tangent_gain: 1_000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FootSide {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactRole {
    Toe,
    Heel,
}

#[derive(Clone, Copy, Debug)]
pub struct ContactPoint {
    pub body: usize,
    /// Offset from the body origin, body frame.
    pub offset: Vector3<f64>,
    pub role: ContactRole,
    pub side: FootSide,
}

/// Toe/heel pairs for every body named `l_*foot*` / `r_*foot*`.
pub fn foot_contact_points(model: &RobotModel) -> Vec<ContactPoint> {
    let mut pts = Vec::new();
    for (i, b) in model.bodies().iter().enumerate() {
        let name = &b.joint.name;
        if !name.contains("foot") {
            continue;
        }
        let side = if name.starts_with("l") {
            FootSide::Left
        } else {
            FootSide::Right
        };
        for (role, x) in [(ContactRole::Toe, FOOT_HALF_LENGTH), (ContactRole::Heel, -FOOT_HALF_LENGTH)] {
            pts.push(ContactPoint {
                body: i,
                offset: Vector3::new(x, 0.0, -FOOT_SOLE_DROP),
                role,
                side,
            });
        }
    }
    pts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stance {
    Left,
    Right,
    Double,
    Airborne,
}

impl Stance {
    pub fn label(&self) -> &'static str {
        match self {
            Stance::Left => "left",
            Stance::Right => "right",
            Stance::Double => "double",
            Stance::Airborne => "none",
        }
    }
}

/// Ground-reaction moment about the center of pressure, one sample.
#[derive(Clone, Copy, Debug)]
pub struct GrmSample {
    pub cp: Vector2<f64>,
    pub mz: f64,
    pub stance: Stance,
    pub total_normal: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ExternalWrench {
    /// World-aligned wrench acting at the base origin.
    pub wrench: SpatialForce,
    /// Simulation time at which the wrench stops acting.
    pub until: f64,
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub gen: GeneralizedState,
    pub time: f64,
    /// Left/right foot in contact (any point above `CONTACT_FORCE_MIN`).
    pub contact_flags: [bool; 2],
    /// World-frame force at each contact point, from the last dynamics pass.
    pub contact_forces: Vec<Vector3<f64>>,
    /// World position of each contact point when the forces were computed.
    pub contact_positions: Vec<Vector3<f64>>,
    pub external_wrench: Option<ExternalWrench>,
    /// Set once any velocity component exceeds the explosion guard.
    pub invalid: bool,
}

#[derive(Error, Debug)]
pub enum SimError {
    #[error("mass matrix is not positive definite (malformed model)")]
    SingularMassMatrix,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    pub model: Arc<RobotModel>,
    pub contacts: Vec<ContactPoint>,
    pub params: ContactParams,
    pub gravity: Vector3<f64>,
}

/// Penalty contact law for one point: stiffness/damping normal force (only
/// below the ground plane, never adhesive) and Coulomb-capped viscous
/// tangential force.
pub fn contact_force(height: f64, velocity: &Vector3<f64>, params: &ContactParams) -> Vector3<f64> {
    if height >= 0.0 {
        return Vector3::zeros();
    }
    let penetration = height.min(0.0);
    let fz = (-params.k_normal * penetration - params.d_normal * velocity.z).max(0.0);
    if fz <= 0.0 {
        return Vector3::zeros();
    }
    let mut ft = Vector2::new(-params.tangent_gain * velocity.x, -params.tangent_gain * velocity.y);
    let cap = params.friction * fz;
    let norm = ft.norm();
    if norm > cap {
        ft *= cap / norm;
    }
    Vector3::new(ft.x, ft.y, fz)
}

/// Output of one dynamics evaluation.
pub struct DynamicsResult {
    pub qdd: DVector<f64>,
    pub contact_forces: Vec<Vector3<f64>>,
    pub contact_positions: Vec<Vector3<f64>>,
}

impl Simulator {
    pub fn new(model: Arc<RobotModel>) -> Self {
        let contacts = foot_contact_points(&model);
        Self {
            model,
            contacts,
            params: ContactParams::default(),
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
        }
    }

    pub fn zero_gravity(mut self) -> Self {
        self.gravity = Vector3::zeros();
        self
    }

    pub fn init_state(&self, gen: GeneralizedState) -> SimState {
        let n = self.contacts.len();
        SimState {
            gen,
            time: 0.0,
            contact_flags: [false, false],
            contact_forces: vec![Vector3::zeros(); n],
            contact_positions: vec![Vector3::zeros(); n],
            external_wrench: None,
            invalid: false,
        }
    }

    /// Generalized accelerations under the given joint torques, plus the
    /// contact forces acting in this configuration. Torques are clamped to
    /// the model limits.
    pub fn forward_dynamics(
        &self,
        state: &SimState,
        joint_torques: &DVector<f64>,
    ) -> Result<DynamicsResult, SimError> {
        let model = &*self.model;
        let nv = model.nv();
        let nb = model.bodies().len();
        let kin = forward_kinematics(model, &state.gen);

        let inertias: Vec<SpatialInertia> = model
            .bodies()
            .iter()
            .zip(&kin.body_pose)
            .map(|(b, pose)| pose.transform_inertia(&b.inertia))
            .collect();

        // External wrench per body, world frame about the world origin.
        let mut f_ext = vec![SpatialForce::zero(); nb];
        let mut contact_forces = vec![Vector3::zeros(); self.contacts.len()];
        let mut contact_positions = vec![Vector3::zeros(); self.contacts.len()];
        for (k, cp) in self.contacts.iter().enumerate() {
            let pose = &kin.body_pose[cp.body];
            let p = pose.transform_point(&cp.offset);
            let vel = &kin.body_vel[cp.body];
            let v_point = vel.linear + vel.angular.cross(&p);
            let f = contact_force(p.z, &v_point, &self.params);
            contact_forces[k] = f;
            contact_positions[k] = p;
            if f != Vector3::zeros() {
                f_ext[cp.body] += SpatialForce::new(p.cross(&f), f);
            }
        }
        if let Some(ext) = &state.external_wrench {
            if state.time < ext.until {
                let pb = state.gen.base_pos();
                f_ext[0] += SpatialForce::new(
                    ext.wrench.moment + pb.cross(&ext.wrench.force),
                    ext.wrench.force,
                );
            }
        }

        // Velocity-product accelerations (qdd = 0), then per-body wrench
        // residuals: what the joints must supply beyond gravity and contact.
        let mut accel = vec![SpatialMotion::zero(); nb];
        for i in 1..nb {
            let parent = model.body(i).joint.parent.unwrap();
            let c = model.body_vel_coord(i);
            let joint_vel = kin.coord_subspace[c] * state.gen.qd[c];
            accel[i] = accel[parent] + motion_cross(&kin.body_vel[i], &joint_vel);
        }
        let grav = SpatialMotion::new(Vector3::zeros(), self.gravity);
        let mut residual: Vec<SpatialForce> = (0..nb)
            .map(|i| {
                inertias[i].momentum(&accel[i])
                    + force_cross(&kin.body_vel[i], &inertias[i].momentum(&kin.body_vel[i]))
                    - inertias[i].momentum(&grav)
                    - f_ext[i]
            })
            .collect();
        for i in (1..nb).rev() {
            let parent = model.body(i).joint.parent.unwrap();
            let r = residual[i];
            residual[parent] += r;
        }
        let mut rhs = DVector::zeros(nv);
        for c in 0..nv {
            rhs[c] = -kin.coord_subspace[c].dot(&residual[model.coord_body(c)]);
        }
        for (j, &tau) in joint_torques.iter().enumerate() {
            let lim = model.body(model.coord_body(6 + j)).joint.torque_limit;
            rhs[6 + j] += tau.clamp(-lim, lim);
        }

        // Composite-rigid-body mass matrix in world coordinates.
        let mut composite = inertias;
        for i in (1..nb).rev() {
            let parent = model.body(i).joint.parent.unwrap();
            let child = composite[i];
            composite[parent] = composite[parent].add(&child);
        }
        let mut mass = DMatrix::zeros(nv, nv);
        for c in 0..nv {
            let body = model.coord_body(c);
            let f = composite[body].momentum(&kin.coord_subspace[c]);
            let mut walk = Some(body);
            while let Some(i) = walk {
                if i == 0 {
                    for c2 in 0..6 {
                        let v = kin.coord_subspace[c2].dot(&f);
                        mass[(c, c2)] = v;
                        mass[(c2, c)] = v;
                    }
                } else {
                    let c2 = model.body_vel_coord(i);
                    let v = kin.coord_subspace[c2].dot(&f);
                    mass[(c, c2)] = v;
                    mass[(c2, c)] = v;
                }
                walk = model.body(i).joint.parent;
            }
        }

        let chol = mass.cholesky().ok_or(SimError::SingularMassMatrix)?;
        let qdd = chol.solve(&rhs);
        Ok(DynamicsResult {
            qdd,
            contact_forces,
            contact_positions,
        })
    }

    /// One semi-implicit Euler step: velocities from the current-state
    /// dynamics, then positions from the new velocities.
    pub fn step(&self, state: &SimState, joint_torques: &DVector<f64>, dt: f64) -> Result<SimState, SimError> {
        let dyn_res = self.forward_dynamics(state, joint_torques)?;
        let qd_new = &state.gen.qd + &dyn_res.qdd * dt;
        let gen = state.gen.integrate_with(&qd_new, dt);
        let time = state.time + dt;

        let mut contact_flags = [false, false];
        for (cp, f) in self.contacts.iter().zip(&dyn_res.contact_forces) {
            if f.z > CONTACT_FORCE_MIN {
                match cp.side {
                    FootSide::Left => contact_flags[0] = true,
                    FootSide::Right => contact_flags[1] = true,
                }
            }
        }

        let external_wrench = state
            .external_wrench
            .filter(|ext| time < ext.until);
        let invalid = state.invalid
            || gen.qd.iter().any(|v| !v.is_finite() || v.abs() > VELOCITY_EXPLOSION_LIMIT);

        Ok(SimState {
            gen,
            time,
            contact_flags,
            contact_forces: dyn_res.contact_forces,
            contact_positions: dyn_res.contact_positions,
            external_wrench,
            invalid,
        })
    }

    /// Vertical ground-reaction moment about the center of pressure, with the
    /// stance foot labeled by the >80% normal-force rule.
    pub fn grm_about_cp(&self, state: &SimState) -> GrmSample {
        let mut total = 0.0;
        let mut per_side = [0.0; 2];
        let mut cp = Vector2::zeros();
        for (c, f) in self.contacts.iter().zip(&state.contact_forces) {
            total += f.z;
            per_side[match c.side {
                FootSide::Left => 0,
                FootSide::Right => 1,
            }] += f.z;
        }
        if total <= CONTACT_FORCE_MIN {
            return GrmSample {
                cp,
                mz: 0.0,
                stance: Stance::Airborne,
                total_normal: total,
            };
        }
        for (p, f) in state.contact_positions.iter().zip(&state.contact_forces) {
            cp += Vector2::new(p.x, p.y) * f.z;
        }
        cp /= total;
        let mut mz = 0.0;
        for (p, f) in state.contact_positions.iter().zip(&state.contact_forces) {
            mz += (p.x - cp.x) * f.y - (p.y - cp.y) * f.x;
        }
        let stance = if per_side[0] > 0.8 * total {
            Stance::Left
        } else if per_side[1] > 0.8 * total {
            Stance::Right
        } else {
            Stance::Double
        };
        GrmSample {
            cp,
            mz,
            stance,
            total_normal: total,
        }
    }
}

/// Arms the state with a world-aligned wrench at the base for `duration` seconds.
pub fn apply_disturbance(state: &SimState, wrench: SpatialForce, duration: f64) -> SimState {
    let mut out = state.clone();
    out.external_wrench = Some(ExternalWrench {
        wrench,
        until: state.time + duration,
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centroidal::momentum_brute_force;
    use crate::model::{load_model, mini_humanoid};
    use approx::assert_relative_eq;

    fn humanoid_sim() -> Simulator {
        Simulator::new(Arc::new(mini_humanoid().clone()))
    }

    /// Base z such that the lowest contact point sits `clearance` above ground.
    fn settle_height(sim: &Simulator, gen: &GeneralizedState, clearance: f64) -> f64 {
        let kin = forward_kinematics(&sim.model, gen);
        let low = sim
            .contacts
            .iter()
            .map(|c| kin.body_pose[c.body].transform_point(&c.offset).z)
            .fold(f64::INFINITY, f64::min);
        gen.base_pos().z - low + clearance
    }

    #[test]
    fn free_fall_accelerates_base_only() {
        let sim = humanoid_sim();
        let mut gen = GeneralizedState::nominal(&sim.model);
        gen.set_base_pos(Vector3::new(0.0, 0.0, 5.0));
        let state = sim.init_state(gen);
        let r = sim.forward_dynamics(&state, &DVector::zeros(14)).unwrap();
        let qdd = &r.qdd;
        assert_relative_eq!(qdd[5], -GRAVITY, epsilon = 1e-9);
        for c in [0, 1, 2, 3, 4] {
            assert!(qdd[c].abs() < 1e-9, "base coord {c}: {}", qdd[c]);
        }
        for j in 6..20 {
            assert!(qdd[j].abs() < 1e-9, "joint coord {j}: {}", qdd[j]);
        }
        assert!(r.contact_forces.iter().all(|f| *f == Vector3::zeros()));
    }

    const PENDULUM: &str = "\
body anchor parent=WORLD joint=floating axis=0,0,1 origin_xyz=0,0,0 origin_rpy=0,0,0 mass=1e8 com=0,0,0 inertia=1e8,1e8,1e8,0,0,0 qlim=-1,1 vlim=100 taulim=100 limb=base
body rod parent=anchor joint=revolute axis=0,1,0 origin_xyz=0,0,0 origin_rpy=0,0,0 mass=1.0 com=0,0,-0.3 inertia=0.03,0.03,0.001,0,0,0 qlim=-1.6,1.6 vlim=100 taulim=100 limb=leg
";

    /// A floating anchor free-falls no matter how heavy it is, so pin it by
    /// canceling its weight with a persistent external force. The reaction
    /// from the swinging rod then moves the anchor by ~rod/anchor mass ratio,
    /// i.e. ~1e-8 — an effectively fixed pivot.
    fn pinned_pendulum() -> (Simulator, SimState) {
        let m = Arc::new(load_model(PENDULUM).unwrap());
        let sim = Simulator::new(m.clone());
        let mut gen = GeneralizedState::nominal(&m);
        gen.q[7] = std::f64::consts::FRAC_PI_2;
        let state = sim.init_state(gen);
        let hold = SpatialForce::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1e8 * GRAVITY));
        let state = apply_disturbance(&state, hold, f64::INFINITY);
        (sim, state)
    }

    #[test]
    fn pendulum_at_horizontal_matches_closed_form() {
        let (sim, state) = pinned_pendulum();
        let r = sim.forward_dynamics(&state, &DVector::zeros(1)).unwrap();
        // I about pivot = 0.03 + 1*0.3^2 = 0.12; qdd = -m g l / I.
        let expect = -(1.0 * GRAVITY * 0.3) / 0.12;
        assert_relative_eq!(r.qdd[6], expect, epsilon = 1e-3);
    }

    #[test]
    fn pendulum_swing_conserves_energy() {
        let (sim, mut state) = pinned_pendulum();
        let zero_tau = DVector::zeros(1);
        // Energy with the pivot as the potential reference: exactly zero at
        // the horizontal start.
        let energy = |st: &SimState| -> f64 {
            let theta = st.gen.q[7];
            let omega = st.gen.qd[6];
            0.5 * 0.12 * omega * omega - 1.0 * GRAVITY * 0.3 * theta.cos()
                + 1.0 * GRAVITY * 0.3 * (std::f64::consts::FRAC_PI_2).cos()
        };
        let scale = 1.0 * GRAVITY * 0.3;
        let e0 = energy(&state);
        for _ in 0..1000 {
            state = sim.step(&state, &zero_tau, 1e-3).unwrap();
            assert!((energy(&state) - e0).abs() < 0.02 * scale);
        }
        // It actually swung.
        assert!(state.gen.q[7] < 1.0);
    }

    #[test]
    fn contact_force_formula_cases() {
        let p = ContactParams::default();
        assert_eq!(contact_force(0.01, &Vector3::zeros(), &p), Vector3::zeros());

        let f = contact_force(-0.001, &Vector3::zeros(), &p);
        assert_relative_eq!(f.z, 30.0, epsilon = 1e-12);
        assert_eq!(f.xy(), Vector2::zeros());

        let f = contact_force(-0.005, &Vector3::new(0.0, 0.0, -0.1), &p);
        assert_relative_eq!(f.z, 180.0, epsilon = 1e-12);

        // High-speed slide: cap active at mu * normal.
        let f = contact_force(-0.005, &Vector3::new(3.0, 0.0, 0.0), &p);
        assert_relative_eq!(f.z, 150.0, epsilon = 1e-12);
        assert_relative_eq!(f.x, -0.8 * 150.0, epsilon = 1e-12);

        // Upward-moving point: damping cannot pull it down.
        let f = contact_force(-0.0001, &Vector3::new(0.0, 0.0, 1.0), &p);
        assert_eq!(f, Vector3::zeros());
    }

    #[test]
    fn slow_tumble_conserves_momentum_tightly() {
        let sim = humanoid_sim().zero_gravity();
        let mut gen = GeneralizedState::nominal(&sim.model);
        gen.set_base_pos(Vector3::new(0.0, 0.0, 5.0));
        for c in 0..sim.model.nv() {
            gen.qd[c] = 1e-3 * ((c as f64) * 0.37).sin();
        }
        let mut state = sim.init_state(gen);
        let h0 = momentum_brute_force(&sim.model, &state.gen).to_vector6();
        let zero_tau = DVector::zeros(14);
        for _ in 0..1000 {
            state = sim.step(&state, &zero_tau, 1e-3).unwrap();
        }
        let h1 = momentum_brute_force(&sim.model, &state.gen).to_vector6();
        let drift = (h1 - h0).amax();
        assert!(drift < 1e-8, "momentum drift {drift}");
    }

    /// Drift under semi-implicit Euler grows ~quadratically with velocity:
    /// the slow tumble above holds 1e-8; at 500x the speed the measured drift
    /// is ~4e-4 of the momentum scale. Guard the order of magnitude.
    #[test]
    fn fast_tumble_momentum_drift_stays_first_order() {
        let sim = humanoid_sim().zero_gravity();
        let mut gen = GeneralizedState::nominal(&sim.model);
        gen.set_base_pos(Vector3::new(0.0, 0.0, 5.0));
        for c in 0..sim.model.nv() {
            gen.qd[c] = 0.5 * ((c as f64) * 0.71).cos();
        }
        let mut state = sim.init_state(gen);
        let h0 = momentum_brute_force(&sim.model, &state.gen).to_vector6();
        let zero_tau = DVector::zeros(14);
        for _ in 0..1000 {
            state = sim.step(&state, &zero_tau, 1e-3).unwrap();
        }
        let h1 = momentum_brute_force(&sim.model, &state.gen).to_vector6();
        assert!((h1 - h0).amax() < 1e-3 * h0.amax());
    }

    #[test]
    fn drop_settles_to_weight_support() {
        let sim = humanoid_sim();
        let mut gen = GeneralizedState::nominal(&sim.model);
        let h = settle_height(&sim, &gen, 0.05);
        gen.set_base_pos(Vector3::new(0.0, 0.0, h));
        let q_des = gen.joint_q(&sim.model);
        let mut state = sim.init_state(gen);
        // Stiff test-local hold: a standing pose is passively unstable below
        // ~125 N·m/rad of total ankle stiffness (the gravity stiffness
        // m·g·h_com), so the statics check needs gains well above the soft
        // control-stack defaults to pin the pose.
        for _ in 0..1000 {
            let q = state.gen.joint_q(&sim.model);
            let qd = state.gen.joint_qd(&sim.model);
            let tau = (q_des.clone() - q) * 200.0 - qd * 4.0;
            state = sim.step(&state, &tau, 1e-3).unwrap();
        }
        let total_normal: f64 = state.contact_forces.iter().map(|f| f.z).sum();
        let weight = 25.0 * GRAVITY;
        assert!(
            (total_normal - weight).abs() < 0.02 * weight,
            "normal {total_normal} vs weight {weight}"
        );
        assert_eq!(state.contact_flags, [true, true]);
        assert!(!state.invalid);
    }

    #[test]
    fn torque_impulse_changes_angular_momentum() {
        let sim = humanoid_sim().zero_gravity();
        let mut gen = GeneralizedState::nominal(&sim.model);
        gen.set_base_pos(Vector3::new(0.0, 0.0, 5.0));
        let state = sim.init_state(gen);
        let wrench = SpatialForce::new(Vector3::new(3.0, 3.0, 3.0), Vector3::zeros());
        let mut state = apply_disturbance(&state, wrench, 0.1);
        let h0 = momentum_brute_force(&sim.model, &state.gen);
        let zero_tau = DVector::zeros(14);
        for _ in 0..200 {
            state = sim.step(&state, &zero_tau, 1e-3).unwrap();
        }
        let dk = momentum_brute_force(&sim.model, &state.gen).moment - h0.moment;
        for i in 0..3 {
            assert!((dk[i] - 0.3).abs() < 0.01 * 0.3, "dk[{i}] = {}", dk[i]);
        }
        assert!(state.external_wrench.is_none(), "wrench should have expired");
    }

    #[test]
    fn general_wrench_impulse_matches_momentum_change() {
        let sim = humanoid_sim().zero_gravity();
        let mut gen = GeneralizedState::nominal(&sim.model);
        gen.set_base_pos(Vector3::new(0.0, 0.0, 5.0));
        let state = sim.init_state(gen);
        let wrench = SpatialForce::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(4.0, 1.0, -2.0));
        let mut state = apply_disturbance(&state, wrench, 0.1);
        let h0 = momentum_brute_force(&sim.model, &state.gen);
        let zero_tau = DVector::zeros(14);
        for _ in 0..100 {
            state = sim.step(&state, &zero_tau, 1e-3).unwrap();
        }
        // First-order integration drift while the body spins up keeps this
        // from being exact; the impulse-momentum match is held to 5%.
        let h1 = momentum_brute_force(&sim.model, &state.gen);
        let dl = h1.force - h0.force;
        let expect_dl = wrench.force * 0.1;
        assert!((dl - expect_dl).norm() < 0.05 * expect_dl.norm(), "dl {dl:?}");
        let com = crate::centroidal::compute_com(&sim.model, &state.gen);
        let lever = state.gen.base_pos() - com;
        let expect_dk = (wrench.moment + lever.cross(&wrench.force)) * 0.1;
        let dk = h1.moment - h0.moment;
        assert!((dk - expect_dk).norm() < 0.05 * expect_dk.norm(), "dk {dk:?}");
    }

    #[test]
    fn zero_wrench_is_a_no_op() {
        let sim = humanoid_sim();
        let mut gen = GeneralizedState::nominal(&sim.model);
        gen.set_base_pos(Vector3::new(0.0, 0.0, 1.0));
        let base = sim.init_state(gen);
        let disturbed = apply_disturbance(&base, SpatialForce::zero(), 0.5);
        let zero_tau = DVector::zeros(14);
        let a = sim.step(&base, &zero_tau, 1e-3).unwrap();
        let b = sim.step(&disturbed, &zero_tau, 1e-3).unwrap();
        assert_eq!(a.gen.q, b.gen.q);
        assert_eq!(a.gen.qd, b.gen.qd);
    }

    #[test]
    fn steps_are_deterministic() {
        let sim = humanoid_sim();
        let mut gen = GeneralizedState::nominal(&sim.model);
        gen.set_base_pos(Vector3::new(0.0, 0.0, 0.55));
        gen.qd[3] = 0.3;
        let state = sim.init_state(gen);
        let tau = DVector::from_element(14, 0.5);
        let a = sim.step(&state, &tau, 1e-3).unwrap();
        let b = sim.step(&state, &tau, 1e-3).unwrap();
        assert_eq!(a.gen.q, b.gen.q);
        assert_eq!(a.gen.qd, b.gen.qd);
        assert_eq!(a.contact_forces, b.contact_forces);
    }

    #[test]
    fn explosion_guard_marks_invalid() {
        let sim = humanoid_sim();
        let mut gen = GeneralizedState::nominal(&sim.model);
        gen.set_base_pos(Vector3::new(0.0, 0.0, 5.0));
        gen.qd[6] = 2e4;
        let state = sim.init_state(gen);
        let next = sim.step(&state, &DVector::zeros(14), 1e-3).unwrap();
        assert!(next.invalid);
    }

    #[test]
    fn grm_single_point_has_zero_moment() {
        let sim = humanoid_sim();
        let gen = GeneralizedState::nominal(&sim.model);
        let mut state = sim.init_state(gen);
        state.contact_forces[0] = Vector3::new(2.0, 1.0, 80.0);
        state.contact_positions[0] = Vector3::new(0.07, 0.1, 0.0);
        let s = sim.grm_about_cp(&state);
        assert_relative_eq!(s.cp, Vector2::new(0.07, 0.1), epsilon = 1e-12);
        assert_relative_eq!(s.mz, 0.0, epsilon = 1e-12);
        assert_eq!(s.stance, Stance::Left);
    }

    #[test]
    fn grm_opposed_tangentials_give_twist_moment() {
        let sim = humanoid_sim();
        let gen = GeneralizedState::nominal(&sim.model);
        let mut state = sim.init_state(gen);
        // Two points 0.1 m fore/aft, equal normals, opposite y-forces.
        state.contact_forces[0] = Vector3::new(0.0, 5.0, 100.0);
        state.contact_positions[0] = Vector3::new(0.1, 0.0, 0.0);
        state.contact_forces[1] = Vector3::new(0.0, -5.0, 100.0);
        state.contact_positions[1] = Vector3::new(-0.1, 0.0, 0.0);
        let s = sim.grm_about_cp(&state);
        assert_relative_eq!(s.cp, Vector2::zeros(), epsilon = 1e-12);
        assert_relative_eq!(s.mz, 2.0 * (0.1 * 5.0), epsilon = 1e-12);
        assert_eq!(s.stance, Stance::Left);
    }

    #[test]
    fn grm_symmetric_double_stance_centers_cp() {
        let sim = humanoid_sim();
        let gen = GeneralizedState::nominal(&sim.model);
        let mut state = sim.init_state(gen);
        // Left toe/heel and right toe/heel with mirrored forces.
        let fz = 60.0;
        for (k, (x, y)) in [(0.07, 0.1), (-0.07, 0.1), (0.07, -0.1), (-0.07, -0.1)]
            .into_iter()
            .enumerate()
        {
            state.contact_forces[k] = Vector3::new(1.0, 0.0, fz);
            state.contact_positions[k] = Vector3::new(x, y, 0.0);
        }
        let s = sim.grm_about_cp(&state);
        assert_relative_eq!(s.cp, Vector2::zeros(), epsilon = 1e-12);
        assert_eq!(s.stance, Stance::Double);
        assert_relative_eq!(s.mz, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn airborne_below_threshold() {
        let sim = humanoid_sim();
        let gen = GeneralizedState::nominal(&sim.model);
        let mut state = sim.init_state(gen);
        state.contact_forces[0] = Vector3::new(0.0, 0.0, 0.5);
        state.contact_positions[0] = Vector3::new(0.07, 0.1, 0.0);
        let s = sim.grm_about_cp(&state);
        assert_eq!(s.stance, Stance::Airborne);
    }

    #[test]
    fn mass_matrix_energy_agrees_with_body_sum() {
        // KE via 0.5 qd' M qd must match the per-body kinetic energy, which
        // exercises the composite-rigid-body assembly off the solve path.
        let sim = humanoid_sim();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let m = &*sim.model;
        let mut gen = GeneralizedState::nominal(m);
        for j in 0..m.n_joints() {
            gen.q[7 + j] = rng.gen_range(-1.0..1.0);
        }
        for c in 0..m.nv() {
            gen.qd[c] = rng.gen_range(-1.0..1.0);
        }
        let kin = forward_kinematics(m, &gen);
        let ke_bodies: f64 = m
            .bodies()
            .iter()
            .zip(&kin.body_pose)
            .zip(&kin.body_vel)
            .map(|((b, pose), v)| pose.transform_inertia(&b.inertia).kinetic_energy(v))
            .sum();

        // Reassemble M the same way forward_dynamics does, via a probe:
        // M qd = d(momentum)/d(coordinates) is awkward; instead solve for
        // qdd with rhs = M qd using the identity M qd = (M qd).
        // Simpler: evaluate KE via the dynamics result of a no-force state:
        // use the quadratic form through finite differences of the solver is
        // overkill — expose the same composite assembly here.
        let inertias: Vec<_> = m
            .bodies()
            .iter()
            .zip(&kin.body_pose)
            .map(|(b, pose)| pose.transform_inertia(&b.inertia))
            .collect();
        let mut composite = inertias;
        for i in (1..m.bodies().len()).rev() {
            let parent = m.body(i).joint.parent.unwrap();
            let child = composite[i];
            composite[parent] = composite[parent].add(&child);
        }
        let mut ke_matrix = 0.0;
        for c in 0..m.nv() {
            let body = m.coord_body(c);
            let f = composite[body].momentum(&kin.coord_subspace[c]);
            let mut walk = Some(body);
            while let Some(i) = walk {
                let coords: Vec<usize> = if i == 0 {
                    (0..6).collect()
                } else {
                    vec![m.body_vel_coord(i)]
                };
                for c2 in coords {
                    let mjk = kin.coord_subspace[c2].dot(&f);
                    let w = if c2 == c { 1.0 } else { 2.0 * if c2 < c { 1.0 } else { 0.0 } };
                    ke_matrix += 0.5 * w * mjk * gen.qd[c] * gen.qd[c2];
                }
                walk = m.body(i).joint.parent;
            }
        }
        assert_relative_eq!(ke_bodies, ke_matrix, epsilon = 1e-9);
    }
}
