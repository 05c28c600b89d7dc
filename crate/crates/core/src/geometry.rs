//! Rigid-body math: rotations, poses, Euler angles and the cross-robot
//! alignment transform.
//!
//! Rotations are stored as canonical unit quaternions (`w >= 0`), which keeps
//! the 7-number serialized form lossless. [`Rotation::matrix`] yields the
//! orthonormal 3×3 matrix.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Allowed deviation of a quaternion norm (or `R·Rᵀ`) from identity before
/// re-normalization kicks in.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Margin from `±π/2` pitch inside which Euler extraction is refused.
pub const GIMBAL_LOCK_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is at gimbal lock (pitch {pitch} rad), Euler angles are not unique")]
    GimbalLock { pitch: f64 },
    #[error("pose has a non-finite component")]
    NonFinite,
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
}

/// A proper rotation in 3D.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.0.quaternion();
        write!(f, "Rotation(w={}, x={}, y={}, z={})", q.w, q.i, q.j, q.k)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

fn canonical(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let norm = q.norm();
    let q = if (norm - 1.0).abs() > ORTHONORMAL_TOLERANCE {
        q / norm
    } else {
        q
    };
    let q = if q.w < 0.0 { -q } else { q };
    UnitQuaternion::new_unchecked(q)
}

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Builds a rotation from quaternion components. Inputs within
    /// [`ORTHONORMAL_TOLERANCE`] of unit norm are kept bit-for-bit (after the
    /// sign canonicalization), anything else is normalized.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        if ![w, x, y, z].iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if q.norm() == 0.0 {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Self(canonical(q)))
    }

    /// Canonical components `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let half = 0.5 * angle;
        let a = axis.normalize() * half.sin();
        Self(canonical(Quaternion::new(half.cos(), a.x, a.y, a.z)))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Builds a rotation from a 3×3 matrix. A matrix that is not orthonormal
    /// within tolerance is first projected onto SO(3) by polar decomposition.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let drift = (m * m.transpose() - Matrix3::identity()).amax();
        let m = if drift > ORTHONORMAL_TOLERANCE {
            polar_orthonormalize(m)
        } else {
            *m
        };
        let rot = nalgebra::Rotation3::from_matrix_unchecked(m);
        Self(canonical(*UnitQuaternion::from_rotation_matrix(&rot).quaternion()))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.0.to_rotation_matrix().matrix()
    }

    pub fn as_unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(canonical(*self.0.inverse().quaternion()))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self(canonical(self.0.quaternion() * other.0.quaternion()))
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// Rotation vector (axis · angle).
    pub fn log(&self) -> Vector3<f64> {
        let q = self.0.quaternion();
        let v = q.imag();
        let s = v.norm();
        if s < 1e-12 {
            // first-order expansion around identity
            return v * 2.0;
        }
        v * (2.0 * s.atan2(q.w) / s)
    }

    /// Angle of `self⁻¹ ∘ other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).angle()
    }

    /// Intrinsic X-Y-Z Euler angles: `R = Rx(rx) · Ry(ry) · Rz(rz)`.
    pub fn from_euler(rx: f64, ry: f64, rz: f64) -> Self {
        Self::rot_x(rx).compose(&Self::rot_y(ry)).compose(&Self::rot_z(rz))
    }

    /// Inverse of [`Rotation::from_euler`]; refuses inputs within
    /// [`GIMBAL_LOCK_MARGIN`] of `|ry| = π/2`.
    pub fn to_euler(&self) -> Result<(f64, f64, f64), GeometryError> {
        let m = self.matrix();
        let ry = m[(0, 2)].clamp(-1.0, 1.0).asin();
        if ry.abs() >= FRAC_PI_2 - GIMBAL_LOCK_MARGIN {
            return Err(GeometryError::GimbalLock { pitch: ry });
        }
        let rx = (-m[(1, 2)]).atan2(m[(2, 2)]);
        let rz = (-m[(0, 1)]).atan2(m[(0, 0)]);
        Ok((rx, ry, rz))
    }
}

fn polar_orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Intrinsic-XYZ Euler angles to a rotation.
pub fn euler_to_rotation(rx: f64, ry: f64, rz: f64) -> Rotation {
    Rotation::from_euler(rx, ry, rz)
}

pub fn rotation_to_euler(r: &Rotation) -> Result<(f64, f64, f64), GeometryError> {
    r.to_euler()
}

/// A rigid pose: rotation followed by translation (meters).
///
/// Serialized as `[tx, ty, tz, qw, qx, qy, qz]` with `qw >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

/// A pose used as a frame-change operator.
pub type RigidTransform = Pose;

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Rotation::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// `self ∘ other`: maps points through `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -inv.apply(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(v)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    pub fn to_array(&self) -> [f64; 7] {
        let t = &self.translation;
        let [w, x, y, z] = self.rotation.quaternion();
        [t.x, t.y, t.z, w, x, y, z]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self, GeometryError> {
        if !a[..3].iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let rotation = Rotation::from_quaternion(a[3], a[4], a[5], a[6])?;
        Ok(Self::new(rotation, Vector3::new(a[0], a[1], a[2])))
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(deserializer)?;
        Pose::from_array(a).map_err(serde::de::Error::custom)
    }
}

/// `a ∘ b`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Expresses a gripper pose of one robot in the other robot's frame:
/// `p' = t ∘ p`.
pub fn align_pose(p: &Pose, t: &RigidTransform) -> Pose {
    t.compose(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    #[default]
    AbsoluteTarget,
    Delta,
}

/// An end-effector command: a pose (absolute target or delta) plus a gripper
/// opening in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    #[serde(default)]
    pub kind: ActionKind,
    pub pose: Pose,
    pub gripper: f64,
}

impl Action {
    pub fn absolute(pose: Pose, gripper: f64) -> Self {
        Self {
            kind: ActionKind::AbsoluteTarget,
            pose,
            gripper,
        }
    }

    pub fn delta(pose: Pose, gripper: f64) -> Self {
        Self {
            kind: ActionKind::Delta,
            pose,
            gripper,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.gripper) && self.pose.is_finite()
    }
}

/// Maps an action into the aligned frame. Absolute targets move like poses;
/// deltas are conjugated by the rotation of `t` (a translation offset does not
/// change a displacement). The gripper channel is untouched.
pub fn align_action(a: &Action, t: &RigidTransform) -> Action {
    let pose = match a.kind {
        ActionKind::AbsoluteTarget => align_pose(&a.pose, t),
        ActionKind::Delta => {
            let r = &t.rotation;
            Pose {
                rotation: r.compose(&a.pose.rotation).compose(&r.inverse()),
                translation: r.apply(&a.pose.translation),
            }
        }
    };
    Action { pose, ..*a }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.translation - b.translation).amax() <= tol && a.rotation.angle_to(&b.rotation) <= tol
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(-PI..PI),
        )
            .prop_map(|(t, e)| {
                Pose::new(
                    Rotation::from_euler(e[0], e[1] * 0.49, e[2]),
                    Vector3::from(t),
                )
            })
    }

    fn orthonormal(r: &Rotation) -> bool {
        let m = r.matrix();
        (m * m.transpose() - Matrix3::identity()).amax() < 1e-9 && (m.determinant() - 1.0).abs() < 1e-9
    }

    #[test]
    fn compose_identity_is_noop() {
        let x = Pose::new(Rotation::from_euler(0.3, -0.2, 1.1), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(compose(&Pose::identity(), &x), x);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let x = Pose::new(Rotation::from_euler(0.3, -0.2, 1.1), Vector3::new(1.0, 2.0, 3.0));
        let id = compose(&x, &inverse(&x));
        assert!(pose_close(&id, &Pose::identity(), 1e-9));
    }

    #[test]
    fn compose_rotates_translation() {
        let a = Pose::from_rotation(Rotation::rot_z(PI / 2.0));
        let b = Pose::from_translation(1.0, 0.0, 0.0);
        let c = compose(&a, &b);
        assert_relative_eq!(c.translation, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn align_pose_identity_and_translation() {
        let p = Pose::new(Rotation::from_euler(0.1, 0.2, 0.3), Vector3::new(0.4, 0.5, 0.6));
        assert_eq!(align_pose(&p, &Pose::identity()), p);
        let moved = align_pose(&Pose::identity(), &Pose::from_translation(0.1, 0.0, 0.0));
        assert_eq!(moved.translation, Vector3::new(0.1, 0.0, 0.0));
        assert_eq!(moved.rotation, Rotation::identity());
    }

    #[test]
    fn align_pose_round_trip_over_random_poses() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let random_pose = |rng: &mut rand_chacha::ChaCha8Rng| {
            let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let q = Rotation::from_quaternion(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap();
            Pose::new(q, t)
        };
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            let t = random_pose(&mut rng);
            let back = align_pose(&align_pose(&p, &t), &t.inverse());
            assert!(pose_close(&back, &p, 1e-9), "{p:?} vs {back:?}");
        }
    }

    #[test]
    fn action_alignment() {
        let p = Pose::new(Rotation::from_euler(0.1, 0.2, 0.3), Vector3::new(0.4, 0.5, 0.6));
        let t = Pose::new(Rotation::from_euler(-0.4, 0.2, 0.9), Vector3::new(0.1, -0.2, 0.3));
        for gripper in [0.0, 1.0] {
            let a = Action::absolute(p, gripper);
            assert_eq!(align_action(&a, &Pose::identity()), a);
            let aligned = align_action(&a, &t);
            assert_eq!(aligned.gripper, gripper);
            assert_eq!(aligned.pose, align_pose(&p, &t));
            let d = Action::delta(p, gripper);
            assert_eq!(align_action(&d, &t).gripper, gripper);
        }
    }

    #[test]
    fn delta_action_is_conjugated() {
        // A delta that moves by +x in the old frame moves along R·x in the new one,
        // regardless of the offset in t.
        let t = Pose::new(Rotation::rot_z(PI / 2.0), Vector3::new(5.0, 5.0, 5.0));
        let d = Action::delta(Pose::new(Rotation::rot_x(0.2), Vector3::new(0.01, 0.0, 0.0)), 0.5);
        let aligned = align_action(&d, &t);
        assert_relative_eq!(aligned.pose.translation, Vector3::new(0.0, 0.01, 0.0), epsilon = 1e-15);
        let expected = Rotation::from_axis_angle(&Vector3::y(), 0.2);
        assert!(aligned.pose.rotation.angle_to(&expected) < 1e-12);
    }

    #[test]
    fn euler_cases() {
        assert_eq!(Rotation::from_euler(0.0, 0.0, 0.0), Rotation::identity());
        let r = Rotation::from_euler(0.1, 0.0, 0.0);
        assert!(r.angle_to(&Rotation::rot_x(0.1)) < 1e-15);
        let (rx, ry, rz) = r.to_euler().unwrap();
        assert_relative_eq!(rx, 0.1, epsilon = 1e-15);
        assert_eq!((ry, rz), (0.0, 0.0));
    }

    #[test]
    fn euler_convention_is_intrinsic_xyz() {
        let (rx, ry, rz) = (0.3, -0.2, 0.7);
        let m = Rotation::from_euler(rx, ry, rz).matrix();
        let expected = *nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), rx).matrix()
            * nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), ry).matrix()
            * nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), rz).matrix();
        assert_relative_eq!(m, expected, epsilon = 1e-14);
    }

    #[test]
    fn gimbal_lock_is_flagged() {
        let r = Rotation::from_euler(0.2, FRAC_PI_2, 0.1);
        assert!(matches!(r.to_euler(), Err(GeometryError::GimbalLock { .. })));
    }

    #[test]
    fn non_orthonormal_matrix_is_projected() {
        let mut m = Rotation::from_euler(0.3, 0.2, 0.1).matrix();
        m[(0, 0)] += 1e-4;
        assert!(orthonormal(&Rotation::from_matrix(&m)));
    }

    #[test]
    fn long_compose_chain_stays_orthonormal() {
        let step = Pose::new(Rotation::from_euler(0.013, -0.021, 0.017), Vector3::new(0.01, 0.0, 0.0));
        let mut acc = Pose::identity();
        for _ in 0..100_000 {
            acc = acc.compose(&step);
        }
        assert!(orthonormal(&acc.rotation));
    }

    #[test]
    fn serialized_form_is_canonical() {
        let r = Rotation::from_quaternion(-0.5, 0.5, 0.5, 0.5).unwrap();
        assert_eq!(r.quaternion(), [0.5, -0.5, -0.5, -0.5]);
        let p = Pose::new(r, Vector3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[1.0,2.0,3.0,0.5,-0.5,-0.5,-0.5]");
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(pose_close(&l, &r, 1e-9));
            prop_assert!(orthonormal(&l.rotation));
        }

        #[test]
        fn inverse_reverses_composition(a in arb_pose(), b in arb_pose()) {
            let l = a.compose(&b).inverse();
            let r = b.inverse().compose(&a.inverse());
            prop_assert!(pose_close(&l, &r, 1e-9));
        }

        #[test]
        fn alignment_preserves_distances(p1 in arb_pose(), p2 in arb_pose(), t in arb_pose()) {
            let d0 = (p1.translation - p2.translation).norm();
            let d1 = (align_pose(&p1, &t).translation - align_pose(&p2, &t).translation).norm();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn small_euler_round_trip(e in prop::array::uniform3(-0.1f64..0.1)) {
            let (rx, ry, rz) = Rotation::from_euler(e[0], e[1], e[2]).to_euler().unwrap();
            prop_assert!((rx - e[0]).abs() < 1e-9 && (ry - e[1]).abs() < 1e-9 && (rz - e[2]).abs() < 1e-9);
        }

        #[test]
        fn euler_round_trip_away_from_gimbal_lock(rx in -PI..PI, ry in -1.5f64..1.5, rz in -PI..PI) {
            let (ax, ay, az) = Rotation::from_euler(rx, ry, rz).to_euler().unwrap();
            prop_assert!((ax - rx).abs() < 1e-9 && (ay - ry).abs() < 1e-9 && (az - rz).abs() < 1e-9);
        }
    }
}
