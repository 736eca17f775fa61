//! Self-contained dynamics validation suite: every check pits one computation
//! against an independent oracle (brute-force momentum sums, finite
//! differences, impulse bookkeeping) on randomized mini-humanoid states and
//! reports a pass/fail line. The CLI exposes these as `validate-dynamics`;
//! the acceptance tests assert each one individually.

use crate::centroidal::{
    momentum_brute_force, momentum_rate_bias, reference_momentum, CentroidalQuantities, CommandVel,
};
use crate::model::{forward_kinematics, GeneralizedState, RobotModel};
use crate::sim::{Simulator, GRAVITY};
use nalgebra::{DVector, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    /// Measured worst error and the bound it was held to.
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        CheckResult { name, pass, detail }
    }
}

/// Random state with joints inside their limits and a random base pose.
pub fn random_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> GeneralizedState {
    let mut gen = GeneralizedState::nominal(model);
    gen.set_base_pos(Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.3..1.5),
    ));
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    gen.set_base_quat(UnitQuaternion::from_scaled_axis(axis));
    let (lo, hi, _, _) = model.joint_limits();
    for j in 0..model.n_joints() {
        let mid = 0.5 * (lo[j] + hi[j]);
        let half = 0.4 * (hi[j] - lo[j]);
        gen.q[7 + j] = mid + rng.gen_range(-half..half);
    }
    for c in 0..model.nv() {
        gen.qd[c] = rng.gen_range(-1.0..1.0);
    }
    gen
}

/// Momentum via the centroidal matrix vs an explicit per-body sum.
pub fn check_momentum_matrix(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let gen = random_state(model, rng);
        let q = CentroidalQuantities::compute(model, &gen, &CommandVel::default());
        let href = momentum_brute_force(model, &gen).to_vector6();
        let err = (q.h.to_vector6() - href).norm() / href.norm().max(1.0);
        worst = worst.max(err);
    }
    CheckResult::new(
        "momentum matrix vs per-body sum (1000 states)",
        worst < 1e-9,
        format!("worst relative error {worst:.3e} (bound 1e-9)"),
    )
}

/// Per-limb momentum blocks must add back to the whole.
pub fn check_limb_decomposition(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let gen = random_state(model, rng);
        let q = CentroidalQuantities::compute(model, &gen, &CommandVel::default());
        let sum = q.parts.base.to_vector6() + q.parts.legs.to_vector6() + q.parts.arms.to_vector6();
        worst = worst.max((sum - q.h.to_vector6()).amax());
    }
    CheckResult::new(
        "limb momentum decomposition additivity (1000 states)",
        worst < 1e-10,
        format!("worst component error {worst:.3e} (bound 1e-10)"),
    )
}

/// Gravity-free, contact-free tumble must hold momentum across 1 s.
pub fn check_momentum_conservation(model: &Arc<RobotModel>, rng: &mut ChaCha8Rng) -> CheckResult {
    let sim = Simulator::new(model.clone()).zero_gravity();
    let mut gen = GeneralizedState::nominal(model);
    gen.set_base_pos(Vector3::new(0.0, 0.0, 10.0));
    for c in 0..model.nv() {
        gen.qd[c] = rng.gen_range(-1e-3..1e-3);
    }
    let mut state = sim.init_state(gen);
    let h0 = momentum_brute_force(model, &state.gen).to_vector6();
    let zero_tau = DVector::zeros(model.n_joints());
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        state = match sim.step(&state, &zero_tau, 1e-3) {
            Ok(s) => s,
            Err(_) => {
                ok = false;
                break;
            }
        };
        let drift = (momentum_brute_force(model, &state.gen).to_vector6() - h0).amax();
        worst = worst.max(drift);
    }
    CheckResult::new(
        "momentum conservation, free tumble 1 s",
        ok && worst < 1e-8,
        format!("worst component drift {worst:.3e} (bound 1e-8)"),
    )
}

/// Scripted-gait rollout: windowed momentum change vs integrated external
/// wrench (contacts about the COM plus gravity). The error is measured
/// against the gross wrench activity in the window, which stays well
/// conditioned when the net impulse passes through zero.
pub fn check_newton_euler(model: &Arc<RobotModel>) -> CheckResult {
    let sim = Simulator::new(model.clone());
    let mut gen = GeneralizedState::nominal(model);
    {
        let kin = forward_kinematics(model, &gen);
        let low = sim
            .contacts
            .iter()
            .map(|c| kin.body_pose[c.body].transform_point(&c.offset).z)
            .fold(f64::INFINITY, f64::min);
        gen.set_base_pos(Vector3::new(0.0, 0.0, gen.base_pos().z - low + 0.002));
    }
    let q_nom = gen.joint_q(model);
    let mut state = sim.init_state(gen);
    let dt = 1e-3;
    let total_mass = model.total_mass();

    let mut hs: Vec<Vector6<f64>> = vec![momentum_brute_force(model, &state.gen).to_vector6()];
    let mut impulses: Vec<Vector6<f64>> = Vec::new();
    let mut gross: Vec<f64> = Vec::new();

    for k in 0..1000 {
        // Leg-swing script around the nominal pose, period 0.8 s.
        let t = k as f64 * dt;
        let phase = 2.0 * std::f64::consts::PI * t / 0.8;
        let mut q_des = q_nom.clone();
        for (j, name) in model
            .bodies()
            .iter()
            .skip(1)
            .map(|b| b.joint.name.as_str())
            .enumerate()
        {
            let sign = if name.starts_with("l_") { 1.0 } else { -1.0 };
            let amp = match name {
                n if n.ends_with("hip") => 0.25,
                n if n.ends_with("shank") => 0.3,
                n if n.ends_with("foot") => 0.15,
                n if n.ends_with("upper_arm") || n.ends_with("shoulder") => 0.2,
                _ => 0.0,
            };
            q_des[j] += sign * amp * phase.sin();
        }
        let q = state.gen.joint_q(model);
        let qd = state.gen.joint_qd(model);
        let tau = (q_des - q) * 30.0 - qd * 1.0;

        // Wrench about the COM at the pre-step state: exactly the forces the
        // step integrates.
        let com = crate::centroidal::compute_com(model, &state.gen);
        let next = match sim.step(&state, &tau, dt) {
            Ok(s) => s,
            Err(_) => {
                return CheckResult::new(
                    "momentum rate vs external wrenches, scripted gait",
                    false,
                    "dynamics solve failed".into(),
                )
            }
        };
        let mut moment = Vector3::zeros();
        let mut force = Vector3::new(0.0, 0.0, -total_mass * GRAVITY);
        let mut activity = total_mass * GRAVITY;
        for (p, f) in next.contact_positions.iter().zip(&next.contact_forces) {
            moment += (p - com).cross(f);
            force += f;
            activity += f.norm();
        }
        let mut w = Vector6::zeros();
        w.fixed_rows_mut::<3>(0).copy_from(&moment);
        w.fixed_rows_mut::<3>(3).copy_from(&force);
        impulses.push(w * dt);
        gross.push(activity * dt);
        hs.push(momentum_brute_force(model, &next.gen).to_vector6());
        state = next;
    }

    let window = 50;
    let mut worst: f64 = 0.0;
    for start in (0..=(1000 - window)).step_by(window) {
        let dh = hs[start + window] - hs[start];
        let mut imp = Vector6::zeros();
        let mut scale = 0.0;
        for k in start..start + window {
            imp += impulses[k];
            scale += gross[k];
        }
        worst = worst.max((dh - imp).norm() / scale);
    }
    CheckResult::new(
        "momentum rate vs external wrenches, scripted gait",
        worst < 0.02,
        format!("worst windowed error {worst:.3e} of wrench activity (bound 2e-2)"),
    )
}

/// Analytic velocity-product momentum rate vs central differences of A·q̇
/// along the prescribed-velocity path.
pub fn check_bias_finite_difference(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let gen = random_state(model, rng);
        let analytic = momentum_rate_bias(model, &gen).to_vector6();
        let plus = gen.integrate(eps);
        let minus = gen.integrate(-eps);
        let hp = momentum_brute_force(model, &plus).to_vector6();
        let hm = momentum_brute_force(model, &minus).to_vector6();
        let fd = (hp - hm) / (2.0 * eps);
        let err = (analytic - fd).norm() / fd.norm().max(1.0);
        worst = worst.max(err);
    }
    CheckResult::new(
        "momentum rate bias vs central differences (100 states)",
        worst < 1e-4,
        format!("worst relative error {worst:.3e} (bound 1e-4)"),
    )
}

/// Reference momentum: zero command gives the exact zero vector; a general
/// command must match assembling the yaw/x/y matrix columns directly.
pub fn check_reference_momentum(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut zero_exact = true;
    for _ in 0..100 {
        let gen = random_state(model, rng);

        let zero = reference_momentum(model, &gen, &CommandVel::new(0.0, 0.0, 0.0));
        if zero.to_vector6() != Vector6::zeros() {
            zero_exact = false;
        }

        let cmd = CommandVel::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let q = CentroidalQuantities::compute(model, &gen, &cmd);
        let manual = q.cmm.column(2) * cmd.wz + q.cmm.column(3) * cmd.vx + q.cmm.column(4) * cmd.vy;
        worst = worst.max((q.h_ref.to_vector6() - manual).amax());
    }
    CheckResult::new(
        "reference momentum: zero command exact, column assembly",
        zero_exact && worst < 1e-12,
        format!("zero-command exact: {zero_exact}, worst column error {worst:.3e} (bound 1e-12)"),
    )
}

/// Runs every dynamics check with a deterministic stream per check.
pub fn run_all(model: &Arc<RobotModel>, seed: u64) -> Vec<CheckResult> {
    use rand::SeedableRng;
    let mut results = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    results.push(check_momentum_matrix(model, &mut rng));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    results.push(check_limb_decomposition(model, &mut rng));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    results.push(check_momentum_conservation(model, &mut rng));
    results.push(check_newton_euler(model));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    results.push(check_bias_finite_difference(model, &mut rng));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    results.push(check_reference_momentum(model, &mut rng));
    results
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mini_humanoid;

    #[test]
    fn all_dynamics_checks_pass() {
        let model = Arc::new(mini_humanoid().clone());
        for r in run_all(&model, 7) {
            assert!(r.pass, "{}: {}", r.name, r.detail);
        }
    }
}
