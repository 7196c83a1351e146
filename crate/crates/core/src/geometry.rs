//! Rigid transforms and quaternion kinematics.
//!
//! Quaternions are stored in `(x, y, z, w)` order everywhere a raw vector is
//! exposed (filter state, measurements, serialized poses), which is also the
//! coordinate order of [`nalgebra::Quaternion::coords`]. Angles are radians.

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position in meters plus unit-quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

/// Linear (m/s) and angular (rad/s) velocity, both expressed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Builds a pose from raw `(x, y, z, w)` quaternion coordinates, normalizing them.
    pub fn from_xyzw(position: Vector3<f64>, q: Vector4<f64>) -> Result<Self> {
        if !position.iter().chain(q.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let norm = q.norm();
        if norm < 1e-12 {
            return Err(Error::NonFinite("pose quaternion (zero norm)"));
        }
        Ok(Self::new(
            position,
            UnitQuaternion::new_unchecked(Quaternion::from(q / norm)),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// `self * other`: express `other` (given in the frame of `self`) in the parent frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation * other.position,
            orientation: renormalize(self.orientation * other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }

    /// Unit x/y/z axes of this frame expressed in the parent frame.
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.rotation_matrix().column(i).into_owned()
    }

    /// Position distance in meters.
    pub fn distance(&self, other: &Pose) -> f64 {
        (self.position - other.position).norm()
    }
}

/// Checked wrapper around [`Pose::compose`].
pub fn pose_compose(a: &Pose, b: &Pose) -> Result<Pose> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("pose_compose input"));
    }
    Ok(a.compose(b))
}

pub fn pose_inverse(p: &Pose) -> Result<Pose> {
    if !p.is_finite() {
        return Err(Error::NonFinite("pose_inverse input"));
    }
    Ok(p.inverse())
}

/// Rotation angle separating two orientations, in `[0, pi]`. `q` and `-q` are identified.
pub fn geodesic_angle(qa: &UnitQuaternion<f64>, qb: &UnitQuaternion<f64>) -> f64 {
    // atan2 form stays accurate near zero, where acos of the dot product does not
    let rel = qa.inverse() * qb;
    2.0 * rel.imag().norm().atan2(rel.w.abs())
}

/// First-order quaternion integration `q + 0.5 * q ⊗ [0, ω] * dt`, renormalized.
pub fn quat_integrate(
    q: &UnitQuaternion<f64>,
    omega: &Vector3<f64>,
    dt: f64,
) -> Result<UnitQuaternion<f64>> {
    if !dt.is_finite()
        || !omega.iter().all(|v| v.is_finite())
        || !q.coords.iter().all(|v| v.is_finite())
    {
        return Err(Error::NonFinite("quat_integrate input"));
    }
    if dt < 0.0 {
        return Err(Error::Contract("quat_integrate requires dt >= 0"));
    }
    Ok(quat_integrate_raw(q.quaternion(), omega, dt))
}

/// Same update on an arbitrary (not necessarily unit) quaternion. Used by the
/// filter's process model, which also sees off-manifold perturbations.
pub(crate) fn quat_integrate_raw(
    q: &Quaternion<f64>,
    omega: &Vector3<f64>,
    dt: f64,
) -> UnitQuaternion<f64> {
    let pure = Quaternion::from_imag(*omega);
    let next = q + (q * pure) * (0.5 * dt);
    UnitQuaternion::new_normalize(next)
}

/// Re-projects onto the unit sphere; composition drifts by a few ulps otherwise.
pub(crate) fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Orientation whose local x and z axes map to the given world directions.
/// `z` is kept exactly; `x` is orthogonalized against it.
pub fn frame_from_xz(x_hint: &Vector3<f64>, z: &Vector3<f64>) -> Option<UnitQuaternion<f64>> {
    let z = z.try_normalize(1e-12)?;
    let x = (x_hint - z * z.dot(x_hint)).try_normalize(1e-9)?;
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Some(UnitQuaternion::from_rotation_matrix(&rot))
}

/// Pose at `eye` whose +z axis points at `target`. The x axis is chosen
/// perpendicular to `up` so the image horizon stays level; when the viewing
/// direction is parallel to `up`, `fallback_x` is used instead.
pub fn look_at(
    eye: &Vector3<f64>,
    target: &Vector3<f64>,
    up: &Vector3<f64>,
    fallback_x: &Vector3<f64>,
) -> Option<Pose> {
    let z = (target - eye).try_normalize(1e-12)?;
    let x = z
        .cross(up)
        .try_normalize(1e-6)
        .unwrap_or(*fallback_x);
    let q = frame_from_xz(&x, &z)?;
    Some(Pose::new(*eye, q))
}

/// Axis-angle vector (radians) of the rotation taking `from` to `to`, expressed in the world frame.
pub fn rotation_error(from: &UnitQuaternion<f64>, to: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut delta = to * from.inverse();
    if delta.w < 0.0 {
        delta = UnitQuaternion::new_unchecked(-delta.into_inner());
    }
    delta.scaled_axis()
}

/// Rotates `from` toward `to` by at most `max_angle` radians along the geodesic.
pub fn rotate_toward(
    from: &UnitQuaternion<f64>,
    to: &UnitQuaternion<f64>,
    max_angle: f64,
) -> UnitQuaternion<f64> {
    let err = rotation_error(from, to);
    let angle = err.norm();
    if angle <= max_angle {
        return *to;
    }
    let axis = Unit::new_normalize(err);
    renormalize(UnitQuaternion::from_axis_angle(&axis, max_angle) * from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(a, b, c, d)| {
                a * a + b * b + c * c + d * d > 1e-3
            })
            .prop_map(|(x, y, z, w)| UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)))
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
            arb_quat(),
        )
            .prop_map(|((x, y, z), q)| Pose::new(Vector3::new(x, y, z), q))
    }

    fn assert_pose_eq(a: &Pose, b: &Pose, tol: f64) {
        assert!(
            (a.position - b.position).norm() <= tol,
            "position {:?} vs {:?}",
            a.position,
            b.position
        );
        assert!(geodesic_angle(&a.orientation, &b.orientation) <= tol);
    }

    #[test]
    fn integrate_zero_rate_is_identity() {
        let q = quat_integrate(&UnitQuaternion::identity(), &Vector3::zeros(), 0.05).unwrap();
        assert_eq!(q, UnitQuaternion::identity());

        let arbitrary =
            UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let same = quat_integrate(&arbitrary, &Vector3::zeros(), 0.05).unwrap();
        assert!(geodesic_angle(&arbitrary, &same) < 1e-12);
    }

    #[test]
    fn integrate_yaw_matches_closed_form() {
        let omega = Vector3::new(0.0, 0.0, 2.0 * PI);
        let mut q = UnitQuaternion::identity();
        for _ in 0..200 {
            q = quat_integrate(&q, &omega, 0.0005).unwrap();
        }
        let exact = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.2 * PI);
        assert!(geodesic_angle(&q, &exact) < 1e-3);
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_rejects_bad_input() {
        let q = UnitQuaternion::identity();
        assert!(quat_integrate(&q, &Vector3::new(f64::NAN, 0.0, 0.0), 0.1).is_err());
        assert!(quat_integrate(&q, &Vector3::zeros(), f64::INFINITY).is_err());
        assert!(quat_integrate(&q, &Vector3::zeros(), -0.1).is_err());
    }

    #[test]
    fn compose_translation_yaw_translation() {
        let t = Pose::from_translation(1.0, 0.0, 0.0);
        let yaw = Pose::new(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
        );
        let p = t.compose(&yaw).compose(&t);
        assert_relative_eq!(p.position, Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn inverse_of_pure_translation() {
        let inv = pose_inverse(&Pose::from_translation(0.3, 0.0, 0.0)).unwrap();
        assert_relative_eq!(inv.position, Vector3::new(-0.3, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(pose_inverse(&Pose::identity()).unwrap(), Pose::identity());
    }

    #[test]
    fn compose_rejects_non_finite() {
        let bad = Pose::from_translation(f64::NAN, 0.0, 0.0);
        assert!(pose_compose(&bad, &Pose::identity()).is_err());
        assert!(pose_inverse(&bad).is_err());
    }

    #[test]
    fn geodesic_double_cover_and_right_angle() {
        let q = UnitQuaternion::from_euler_angles(0.2, 0.4, -0.7);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        assert_eq!(geodesic_angle(&q, &q), 0.0);
        assert_eq!(geodesic_angle(&q, &neg), 0.0);
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        assert_relative_eq!(
            geodesic_angle(&UnitQuaternion::identity(), &yaw),
            FRAC_PI_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn look_at_points_z_at_target() {
        let eye = Vector3::new(0.2, -0.4, 0.9);
        let target = Vector3::new(0.5, 0.1, 0.3);
        let pose = look_at(&eye, &target, &Vector3::z(), &Vector3::x()).unwrap();
        let dir = (target - eye).normalize();
        assert_relative_eq!(pose.axis(2), dir, epsilon = 1e-12);
        // straight down falls back to the provided x axis
        let down = look_at(&eye, &(eye - Vector3::z()), &Vector3::z(), &Vector3::y()).unwrap();
        assert_relative_eq!(down.axis(0), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn rotate_toward_is_bounded() {
        let a = UnitQuaternion::identity();
        let b = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 1.0);
        let c = rotate_toward(&a, &b, 0.25);
        assert_relative_eq!(geodesic_angle(&a, &c), 0.25, epsilon = 1e-12);
        assert_eq!(rotate_toward(&a, &b, 2.0), b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn inverse_is_involution(p in arb_pose()) {
            let back = p.inverse().inverse();
            assert_pose_eq(&back, &p, 1e-9);
            assert!((back.orientation.norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn group_axioms(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let id = Pose::identity();
            assert_pose_eq(&id.compose(&a), &a, 1e-8);
            assert_pose_eq(&a.compose(&id), &a, 1e-8);
            assert_pose_eq(&a.compose(&a.inverse()), &id, 1e-8);
            assert_pose_eq(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-8);
            let ab = a.compose(&b);
            prop_assert!((ab.orientation.norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn integration_error_within_first_order_bound(
            q in arb_quat(),
            (ox, oy, oz) in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            dt in 1e-4..0.1f64,
            scale in 0.0..1.0f64,
        ) {
            let dir = Vector3::new(ox, oy, oz);
            prop_assume!(dir.norm() > 1e-6);
            // ‖ω‖·dt spans [0, 0.1] rad
            let omega = dir.normalize() * (0.1 * scale / dt);
            let approx = quat_integrate(&q, &omega, dt).unwrap();
            let exact = q * UnitQuaternion::from_scaled_axis(omega * dt);
            let theta = omega.norm() * dt;
            prop_assert!(geodesic_angle(&approx, &exact) <= 2.0 * 0.5 * theta * theta + 1e-12);
            prop_assert!((approx.norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn geodesic_in_range_and_sign_invariant(a in arb_quat(), b in arb_quat()) {
            let g = geodesic_angle(&a, &b);
            prop_assert!((0.0..=PI).contains(&g));
            let nb = UnitQuaternion::new_unchecked(-b.into_inner());
            prop_assert!((geodesic_angle(&a, &nb) - g).abs() < 1e-9);
        }
    }
}
