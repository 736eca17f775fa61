//! 6D spatial vector algebra for rigid-body kinematics and dynamics.
//!
//! Convention: spatial vectors are ordered [angular; linear]. A motion vector
//! holds (angular velocity, linear velocity of the frame-origin point); a
//! force vector holds (moment about the frame origin, linear force). All
//! quantities attached to a frame are expressed in that frame's coordinates
//! at that frame's origin.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

/// Frobenius-norm defect above which `compose` re-orthonormalizes rotations.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Spatial motion vector (twist): angular velocity and linear velocity of the
/// body point coincident with the frame origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialMotion {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

/// Spatial force vector (wrench): moment about the frame origin and linear force.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialForce {
    pub moment: Vector3<f64>,
    pub force: Vector3<f64>,
}

impl SpatialMotion {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector6(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector6(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.angular);
        v.fixed_rows_mut::<3>(3).copy_from(&self.linear);
        v
    }

    /// Pairing with a force vector: power when `self` is a velocity.
    pub fn dot(&self, f: &SpatialForce) -> f64 {
        self.angular.dot(&f.moment) + self.linear.dot(&f.force)
    }
}

impl SpatialForce {
    pub fn new(moment: Vector3<f64>, force: Vector3<f64>) -> Self {
        Self { moment, force }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector6(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector6(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.moment);
        v.fixed_rows_mut::<3>(3).copy_from(&self.force);
        v
    }
}

macro_rules! impl_vector_ops {
    ($ty:ident, $a:ident, $b:ident) => {
        impl std::ops::Add for $ty {
            type Output = $ty;
            fn add(self, rhs: $ty) -> $ty {
                $ty::new(self.$a + rhs.$a, self.$b + rhs.$b)
            }
        }
        impl std::ops::Sub for $ty {
            type Output = $ty;
            fn sub(self, rhs: $ty) -> $ty {
                $ty::new(self.$a - rhs.$a, self.$b - rhs.$b)
            }
        }
        impl std::ops::Neg for $ty {
            type Output = $ty;
            fn neg(self) -> $ty {
                $ty::new(-self.$a, -self.$b)
            }
        }
        impl std::ops::Mul<f64> for $ty {
            type Output = $ty;
            fn mul(self, s: f64) -> $ty {
                $ty::new(self.$a * s, self.$b * s)
            }
        }
        impl std::ops::AddAssign for $ty {
            fn add_assign(&mut self, rhs: $ty) {
                self.$a += rhs.$a;
                self.$b += rhs.$b;
            }
        }
    };
}

impl_vector_ops!(SpatialMotion, angular, linear);
impl_vector_ops!(SpatialForce, moment, force);

/// Motion-cross product: the rate of change of a motion vector `b` carried by
/// a frame moving with velocity `a`.
pub fn motion_cross(a: &SpatialMotion, b: &SpatialMotion) -> SpatialMotion {
    SpatialMotion::new(
        a.angular.cross(&b.angular),
        a.angular.cross(&b.linear) + a.linear.cross(&b.angular),
    )
}

/// Force-cross product (dual of `motion_cross`): the rate of change of a force
/// vector `f` carried by a frame moving with velocity `a`.
pub fn force_cross(a: &SpatialMotion, f: &SpatialForce) -> SpatialForce {
    SpatialForce::new(
        a.angular.cross(&f.moment) + a.linear.cross(&f.force),
        a.angular.cross(&f.force),
    )
}

/// Rigid transform between coordinate frames in Plücker form. `rotation` and
/// `translation` give the pose of the source frame in the target frame:
/// `x_target = rotation * x_source + translation`.
#[derive(Clone, Copy, Debug)]
pub struct PluckerTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PluckerTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(*axis),
            angle,
        );
        Self::new(rot.into_inner(), Vector3::zeros())
    }

    /// Roll-pitch-yaw (X, then Y, then Z) rotation plus translation.
    pub fn from_xyz_rpy(xyz: Vector3<f64>, rpy: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z);
        Self::new(rot.into_inner(), xyz)
    }

    /// Chains two transforms: the result maps `other`'s source frame into
    /// `self`'s target frame. Re-orthonormalizes when drift exceeds
    /// `ORTHONORMALITY_TOL`.
    pub fn compose(&self, other: &PluckerTransform) -> PluckerTransform {
        let mut out = PluckerTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        );
        if out.orthonormality_defect() > ORTHONORMALITY_TOL {
            out.rotation = orthonormalize(&out.rotation);
        }
        out
    }

    pub fn inverse(&self) -> PluckerTransform {
        let rt = self.rotation.transpose();
        PluckerTransform::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a motion vector from source-frame coordinates (at the source
    /// origin) to target-frame coordinates (at the target origin).
    pub fn transform_motion(&self, m: &SpatialMotion) -> SpatialMotion {
        let ang = self.rotation * m.angular;
        SpatialMotion::new(ang, self.rotation * m.linear + self.translation.cross(&ang))
    }

    /// Maps a force vector from source-frame coordinates to target-frame
    /// coordinates, shifting the moment to the target origin.
    pub fn transform_force(&self, f: &SpatialForce) -> SpatialForce {
        let force = self.rotation * f.force;
        SpatialForce::new(self.rotation * f.moment + self.translation.cross(&force), force)
    }

    pub fn inv_transform_motion(&self, m: &SpatialMotion) -> SpatialMotion {
        self.inverse().transform_motion(m)
    }

    pub fn inv_transform_force(&self, f: &SpatialForce) -> SpatialForce {
        self.inverse().transform_force(f)
    }

    /// Expresses a spatial inertia given in source-frame coordinates (about
    /// the source origin) in target-frame coordinates (about the target origin).
    pub fn transform_inertia(&self, inertia: &SpatialInertia) -> SpatialInertia {
        let m = inertia.mass;
        let com_t = self.transform_point(&inertia.com);
        // Shift to the COM, rotate, then shift to the target origin.
        let i_com = inertia.rot_inertia - parallel_axis(m, &inertia.com);
        let i_com_t = self.rotation * i_com * self.rotation.transpose();
        SpatialInertia {
            mass: m,
            com: com_t,
            rot_inertia: i_com_t + parallel_axis(m, &com_t),
        }
    }

    /// Frobenius norm of `R Rᵀ − I`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.rotation * self.rotation.transpose() - Matrix3::identity()).norm()
    }

    /// 6×6 matrix acting on stacked [angular; linear] motion vectors.
    pub fn motion_matrix(&self) -> Matrix6<f64> {
        let mut x = Matrix6::zeros();
        let tx = skew(&self.translation);
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        x.fixed_view_mut::<3, 3>(3, 0).copy_from(&(tx * self.rotation));
        x.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        x
    }
}

/// Nearest rotation matrix (polar factor) to `r`.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut p = u * v_t;
    if p.determinant() < 0.0 {
        // Flip the axis of least significance to stay in SO(3).
        let mut u = u;
        u.column_mut(2).neg_mut();
        p = u * v_t;
    }
    p
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotational inertia about a frame origin contributed by mass `m` at offset `d`.
pub fn parallel_axis(m: f64, d: &Vector3<f64>) -> Matrix3<f64> {
    m * (Matrix3::identity() * d.norm_squared() - d * d.transpose())
}

/// Spatial inertia of a rigid body: mass, COM offset from the frame origin,
/// and rotational inertia about the frame origin (all in frame coordinates).
#[derive(Clone, Copy, Debug)]
pub struct SpatialInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub rot_inertia: Matrix3<f64>,
}

impl SpatialInertia {
    pub fn zero() -> Self {
        Self {
            mass: 0.0,
            com: Vector3::zeros(),
            rot_inertia: Matrix3::zeros(),
        }
    }

    /// Builds from inertia about the COM (parallel-axis shift to the origin).
    pub fn from_com_inertia(mass: f64, com: Vector3<f64>, i_com: Matrix3<f64>) -> Self {
        Self {
            mass,
            com,
            rot_inertia: i_com + parallel_axis(mass, &com),
        }
    }

    pub fn point_mass(mass: f64, at: Vector3<f64>) -> Self {
        Self::from_com_inertia(mass, at, Matrix3::zeros())
    }

    /// Rotational inertia about the COM.
    pub fn com_inertia(&self) -> Matrix3<f64> {
        self.rot_inertia - parallel_axis(self.mass, &self.com)
    }

    /// Momentum `I v` of a body moving with `v`: angular momentum about the
    /// frame origin and linear momentum.
    pub fn momentum(&self, v: &SpatialMotion) -> SpatialForce {
        let mc = self.mass * self.com;
        SpatialForce::new(
            self.rot_inertia * v.angular + mc.cross(&v.linear),
            self.mass * v.linear - mc.cross(&v.angular),
        )
    }

    pub fn kinetic_energy(&self, v: &SpatialMotion) -> f64 {
        0.5 * v.dot(&self.momentum(v))
    }

    /// Composite inertia of two bodies rigidly joined, expressed in a common frame.
    pub fn add(&self, other: &SpatialInertia) -> SpatialInertia {
        let mass = self.mass + other.mass;
        let com = if mass > 0.0 {
            (self.mass * self.com + other.mass * other.com) / mass
        } else {
            Vector3::zeros()
        };
        SpatialInertia {
            mass,
            com,
            rot_inertia: self.rot_inertia + other.rot_inertia,
        }
    }

    /// 6×6 matrix acting on stacked [angular; linear] motion vectors.
    pub fn matrix(&self) -> Matrix6<f64> {
        let mut i = Matrix6::zeros();
        let mc = skew(&(self.mass * self.com));
        i.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot_inertia);
        i.fixed_view_mut::<3, 3>(0, 3).copy_from(&mc);
        i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-mc));
        i.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * self.mass));
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const EPS: f64 = 1e-12;

    #[test]
    fn motion_cross_unit_yaw_with_unit_x_velocity() {
        let a = SpatialMotion::new(Vector3::z(), Vector3::zeros());
        let b = SpatialMotion::new(Vector3::zeros(), Vector3::x());
        let c = motion_cross(&a, &b);
        assert_relative_eq!(c.angular, Vector3::zeros(), epsilon = EPS);
        assert_relative_eq!(c.linear, Vector3::y(), epsilon = EPS);
    }

    #[test]
    fn cross_operators_match_matrix_forms() {
        // Oracle: explicit 6x6 operators [w^ 0; v^ w^] and [w^ v^; 0 w^].
        let a = SpatialMotion::new(Vector3::new(0.3, -1.2, 0.7), Vector3::new(-0.5, 0.1, 2.0));
        let wx = skew(&a.angular);
        let vx = skew(&a.linear);
        let mut mx = Matrix6::zeros();
        mx.fixed_view_mut::<3, 3>(0, 0).copy_from(&wx);
        mx.fixed_view_mut::<3, 3>(3, 0).copy_from(&vx);
        mx.fixed_view_mut::<3, 3>(3, 3).copy_from(&wx);
        let mut fx = Matrix6::zeros();
        fx.fixed_view_mut::<3, 3>(0, 0).copy_from(&wx);
        fx.fixed_view_mut::<3, 3>(0, 3).copy_from(&vx);
        fx.fixed_view_mut::<3, 3>(3, 3).copy_from(&wx);

        let b = SpatialMotion::new(Vector3::new(1.1, 0.2, -0.4), Vector3::new(0.9, -2.2, 0.3));
        let f = SpatialForce::new(Vector3::new(-0.7, 1.5, 0.2), Vector3::new(0.4, 0.8, -1.6));
        assert_relative_eq!(
            motion_cross(&a, &b).to_vector6(),
            mx * b.to_vector6(),
            epsilon = EPS
        );
        assert_relative_eq!(
            force_cross(&a, &f).to_vector6(),
            fx * f.to_vector6(),
            epsilon = EPS
        );
    }

    #[test]
    fn transform_motion_matches_matrix_form() {
        let x = PluckerTransform::from_xyz_rpy(
            Vector3::new(0.4, -0.2, 1.1),
            Vector3::new(0.3, -0.8, 1.9),
        );
        let m = SpatialMotion::new(Vector3::new(0.2, 0.5, -1.0), Vector3::new(1.4, -0.3, 0.6));
        assert_relative_eq!(
            x.transform_motion(&m).to_vector6(),
            x.motion_matrix() * m.to_vector6(),
            epsilon = EPS
        );
    }

    #[test]
    fn pure_translation_shifts_moment_not_force() {
        let x = PluckerTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let f = SpatialForce::new(Vector3::zeros(), Vector3::x());
        let g = x.transform_force(&f);
        assert_relative_eq!(g.force, Vector3::x(), epsilon = EPS);
        // Moment about the new origin: t x f = z x x = y.
        assert_relative_eq!(g.moment, Vector3::y(), epsilon = EPS);
    }

    #[test]
    fn point_mass_parallel_axis() {
        let m = 2.0;
        let d = Vector3::new(0.0, 0.0, 0.5);
        let i = SpatialInertia::point_mass(m, d);
        // m (|d|^2 E - d d^T): diag(0.5, 0.5, 0) for m=2, d=0.5 z.
        let expect = Matrix3::new(0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(i.rot_inertia, expect, epsilon = EPS);
    }

    #[test]
    fn momentum_matches_inertia_matrix() {
        let i = SpatialInertia::from_com_inertia(
            3.2,
            Vector3::new(0.1, -0.05, 0.3),
            Matrix3::new(0.04, 0.001, 0.0, 0.001, 0.05, -0.002, 0.0, -0.002, 0.02),
        );
        let v = SpatialMotion::new(Vector3::new(0.4, -0.1, 0.9), Vector3::new(-0.2, 1.3, 0.5));
        assert_relative_eq!(
            i.momentum(&v).to_vector6(),
            i.matrix() * v.to_vector6(),
            epsilon = EPS
        );
    }

    #[test]
    fn kinetic_energy_invariant_under_transform() {
        let i = SpatialInertia::from_com_inertia(
            1.7,
            Vector3::new(-0.2, 0.4, 0.1),
            Matrix3::new(0.06, 0.0, 0.01, 0.0, 0.03, 0.0, 0.01, 0.0, 0.05),
        );
        let v = SpatialMotion::new(Vector3::new(1.0, -0.6, 0.3), Vector3::new(0.2, 0.9, -1.1));
        let x = PluckerTransform::from_xyz_rpy(
            Vector3::new(-0.7, 0.3, 0.9),
            Vector3::new(1.2, 0.4, -2.0),
        );
        let e0 = i.kinetic_energy(&v);
        let e1 = x.transform_inertia(&i).kinetic_energy(&x.transform_motion(&v));
        assert_relative_eq!(e0, e1, epsilon = 1e-11);
    }

    #[test]
    fn composed_inverse_is_identity() {
        let x = PluckerTransform::from_xyz_rpy(
            Vector3::new(0.5, -1.2, 0.3),
            Vector3::new(0.7, 0.2, -0.4),
        );
        let id = x.compose(&x.inverse());
        assert!(id.orthonormality_defect() < 1e-12);
        assert_relative_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn long_composition_chain_stays_orthonormal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut x = PluckerTransform::identity();
        for _ in 0..1000 {
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let step = PluckerTransform::from_axis_angle(&axis, rng.gen_range(-3.0..3.0));
            x = x.compose(&step);
        }
        assert!(x.orthonormality_defect() <= ORTHONORMALITY_TOL * 10.0);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    fn arb_motion() -> impl Strategy<Value = SpatialMotion> {
        (arb_vec3(), arb_vec3()).prop_map(|(a, l)| SpatialMotion::new(a, l))
    }

    fn arb_force() -> impl Strategy<Value = SpatialForce> {
        (arb_vec3(), arb_vec3()).prop_map(|(m, f)| SpatialForce::new(m, f))
    }

    fn arb_transform() -> impl Strategy<Value = PluckerTransform> {
        (arb_vec3(), arb_vec3())
            .prop_map(|(xyz, rpy)| PluckerTransform::from_xyz_rpy(xyz, rpy))
    }

    fn arb_inertia() -> impl Strategy<Value = SpatialInertia> {
        (0.1..10.0f64, arb_vec3(), 0.01..1.0f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(
            |(m, c, ix, iy, iz)| {
                SpatialInertia::from_com_inertia(
                    m,
                    c * 0.2,
                    Matrix3::from_diagonal(&Vector3::new(ix, iy, iz)),
                )
            },
        )
    }

    proptest! {
        #[test]
        fn cross_duality(a in arb_motion(), b in arb_motion(), f in arb_force()) {
            // <a xf f, b> == -<f, a xm b>
            let lhs = b.dot(&force_cross(&a, &f));
            let rhs = -motion_cross(&a, &b).dot(&f);
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn transform_round_trip(x in arb_transform(), m in arb_motion(), f in arb_force()) {
            let m2 = x.inv_transform_motion(&x.transform_motion(&m));
            let f2 = x.inv_transform_force(&x.transform_force(&f));
            prop_assert!((m2.to_vector6() - m.to_vector6()).norm() < 1e-10);
            prop_assert!((f2.to_vector6() - f.to_vector6()).norm() < 1e-10);
        }

        #[test]
        fn power_invariant_under_transform(x in arb_transform(), m in arb_motion(), f in arb_force()) {
            let p0 = m.dot(&f);
            let p1 = x.transform_motion(&m).dot(&x.transform_force(&f));
            prop_assert!((p0 - p1).abs() < 1e-10 * (1.0 + p0.abs()));
        }

        #[test]
        fn transformed_inertia_stays_psd(x in arb_transform(), i in arb_inertia(), m in arb_motion()) {
            let e = x.transform_inertia(&i).kinetic_energy(&m);
            prop_assert!(e >= -1e-12);
        }

        #[test]
        fn com_inertia_preserved_by_transform(x in arb_transform(), i in arb_inertia()) {
            let it = x.transform_inertia(&i);
            let rotated = x.rotation * i.com_inertia() * x.rotation.transpose();
            prop_assert!((it.com_inertia() - rotated).norm() < 1e-10);
        }
    }
}
