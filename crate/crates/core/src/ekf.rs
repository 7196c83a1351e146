//! Full-quaternion extended Kalman filter over a 13-dimensional pose state.
//!
//! State layout: `[p(3), v(3), q(4, x y z w), ω(3)]`. The process model is
//! constant linear and angular velocity; the measurement is a 7-vector
//! `[p, q]`. Prediction and update are pure: state in, state out.

use nalgebra::{Matrix3, Matrix4, Quaternion, SMatrix, SVector, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle, quat_integrate_raw, rotate_toward, Pose};

pub const STATE_DIM: usize = 13;
pub const MEAS_DIM: usize = 7;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasVector = SVector<f64, MEAS_DIM>;
pub type MeasMatrix = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const QUAT: usize = 6;
pub const OMEGA: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: StateVector,
    pub p: StateMatrix,
    pub last_update_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Process noise added per prediction of length `dt_ref`.
    pub q: StateMatrix,
    pub r: MeasMatrix,
    pub dt_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMeasurement {
    pub z: MeasVector,
    pub timestamp: f64,
}

/// Diagonal noise parameters as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub q_pos: f64,
    pub q_vel: f64,
    pub q_quat: f64,
    pub q_omega: f64,
    pub r_pos: f64,
    pub r_quat: f64,
    pub dt_ref: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            q_pos: 1e-6,
            q_vel: 2.5e-5,
            q_quat: 1e-8,
            q_omega: 2.5e-5,
            r_pos: 2.5e-5,
            r_quat: 1e-4,
            dt_ref: 0.05,
        }
    }
}

impl NoiseParams {
    pub fn to_config(&self) -> NoiseConfig {
        let mut q = StateVector::zeros();
        q.fixed_rows_mut::<3>(POS).fill(self.q_pos);
        q.fixed_rows_mut::<3>(VEL).fill(self.q_vel);
        q.fixed_rows_mut::<4>(QUAT).fill(self.q_quat);
        q.fixed_rows_mut::<3>(OMEGA).fill(self.q_omega);
        let mut r = MeasVector::zeros();
        r.fixed_rows_mut::<3>(0).fill(self.r_pos);
        r.fixed_rows_mut::<4>(3).fill(self.r_quat);
        NoiseConfig {
            q: StateMatrix::from_diagonal(&q),
            r: MeasMatrix::from_diagonal(&r),
            dt_ref: self.dt_ref,
        }
    }
}

/// Limits on how fast the controller-facing estimate may move while the
/// filter runs without fresh observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClampConfig {
    pub v_clamp: f64,
    pub omega_clamp: f64,
}

impl Default for ClampConfig {
    fn default() -> Self {
        Self {
            v_clamp: 0.03,
            omega_clamp: 0.5,
        }
    }
}

/// Re-feeding of the last observation during tracking loss, with the
/// measurement noise inflated by `rho^n` after `n` consecutive loss ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefeedConfig {
    pub enabled: bool,
    pub rho: f64,
    pub max_inflation: f64,
}

impl Default for RefeedConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rho: 1.5,
            max_inflation: 1e6,
        }
    }
}

impl RefeedConfig {
    pub fn inflation(&self, consecutive_loss_ticks: u32) -> f64 {
        self.rho
            .powi(consecutive_loss_ticks.min(i32::MAX as u32) as i32)
            .min(self.max_inflation)
    }
}

impl PoseMeasurement {
    pub fn from_pose(pose: &Pose, timestamp: f64) -> Self {
        let mut z = MeasVector::zeros();
        z.fixed_rows_mut::<3>(0).copy_from(&pose.position);
        z.fixed_rows_mut::<4>(3).copy_from(&pose.orientation.coords);
        Self { z, timestamp }
    }

    pub fn pose(&self) -> Pose {
        let q = Vector4::new(self.z[3], self.z[4], self.z[5], self.z[6]);
        Pose::new(
            self.z.fixed_rows::<3>(0).into_owned(),
            UnitQuaternion::new_normalize(Quaternion::from(q)),
        )
    }
}

impl FilterState {
    pub fn position(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(POS).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(VEL).into_owned()
    }

    pub fn quaternion_coords(&self) -> Vector4<f64> {
        self.x.fixed_rows::<4>(QUAT).into_owned()
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(OMEGA).into_owned()
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(Quaternion::from(self.quaternion_coords()))
    }

    pub fn mean_pose(&self) -> Pose {
        Pose::new(self.position(), self.orientation())
    }

    pub fn position_covariance(&self) -> Matrix3<f64> {
        self.p.fixed_view::<3, 3>(POS, POS).into_owned()
    }

    pub fn position_trace(&self) -> f64 {
        self.position_covariance().trace()
    }

    fn check_finite(&self) -> Result<()> {
        if self.x.iter().chain(self.p.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("filter state"))
        }
    }
}

pub fn ekf_init(pose0: &Pose, p0_diag: &StateVector, time0: f64) -> Result<FilterState> {
    if !pose0.is_finite() || !p0_diag.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("ekf_init input"));
    }
    if let Some((index, &value)) = p0_diag.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeCovariance { index, value });
    }
    let mut x = StateVector::zeros();
    x.fixed_rows_mut::<3>(POS).copy_from(&pose0.position);
    x.fixed_rows_mut::<4>(QUAT).copy_from(&pose0.orientation.coords);
    Ok(FilterState {
        x,
        p: StateMatrix::from_diagonal(p0_diag),
        last_update_time: time0,
    })
}

/// Constant-velocity transition `f(x)`: `p += v·dt` and the first-order
/// quaternion step `q + ½·q ⊗ [0, ω]·dt`, before renormalization.
pub fn process_transition(x: &StateVector, dt: f64) -> StateVector {
    let mut out = *x;
    let v = x.fixed_rows::<3>(VEL).into_owned();
    let omega = x.fixed_rows::<3>(OMEGA).into_owned();
    let p = x.fixed_rows::<3>(POS) + v * dt;
    out.fixed_rows_mut::<3>(POS).copy_from(&p);
    let q = Quaternion::from(x.fixed_rows::<4>(QUAT).into_owned());
    let q_next = q + (q * Quaternion::from_imag(omega)) * (0.5 * dt);
    out.fixed_rows_mut::<4>(QUAT).copy_from(&q_next.coords);
    out
}

/// Full process model: [`process_transition`] followed by quaternion normalization.
pub fn process_model(x: &StateVector, dt: f64) -> StateVector {
    let mut out = *x;
    let q = Quaternion::from(x.fixed_rows::<4>(QUAT).into_owned());
    let omega = x.fixed_rows::<3>(OMEGA).into_owned();
    let p = x.fixed_rows::<3>(POS) + x.fixed_rows::<3>(VEL) * dt;
    out.fixed_rows_mut::<3>(POS).copy_from(&p);
    out.fixed_rows_mut::<4>(QUAT)
        .copy_from(&quat_integrate_raw(&q, &omega, dt).coords);
    out
}

/// Matrix of `q ↦ q ⊗ r` in `(x, y, z, w)` coordinates.
fn right_mult(r: &Quaternion<f64>) -> Matrix4<f64> {
    let (x, y, z, w) = (r.i, r.j, r.k, r.w);
    Matrix4::new(
        w, z, -y, x, //
        -z, w, x, y, //
        y, -x, w, z, //
        -x, -y, -z, w,
    )
}

/// Matrix of `r ↦ q ⊗ r` in `(x, y, z, w)` coordinates.
fn left_mult(q: &Quaternion<f64>) -> Matrix4<f64> {
    let (x, y, z, w) = (q.i, q.j, q.k, q.w);
    Matrix4::new(
        w, -z, y, x, //
        z, w, -x, y, //
        -y, x, w, z, //
        -x, -y, -z, w,
    )
}

/// Analytic Jacobian `F = ∂f/∂x` of [`process_transition`].
///
/// Renormalization is treated as a retraction onto the unit sphere and is not
/// differentiated, so `J_q = I + ½·dt·R(ω)` and `J_ω = ½·dt·L(q)[:, xyz]`.
pub fn process_jacobian(x: &StateVector, dt: f64) -> StateMatrix {
    let mut f = StateMatrix::identity();
    for i in 0..3 {
        f[(POS + i, VEL + i)] = dt;
    }

    let q = Quaternion::from(x.fixed_rows::<4>(QUAT).into_owned());
    let omega = x.fixed_rows::<3>(OMEGA).into_owned();
    let jq = Matrix4::identity() + right_mult(&Quaternion::from_imag(omega)) * (0.5 * dt);
    let jw = left_mult(&q).fixed_columns::<3>(0) * (0.5 * dt);

    f.fixed_view_mut::<4, 4>(QUAT, QUAT).copy_from(&jq);
    f.fixed_view_mut::<4, 3>(QUAT, OMEGA).copy_from(&jw);
    f
}

fn measurement_jacobian() -> SMatrix<f64, MEAS_DIM, STATE_DIM> {
    let mut h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::zeros();
    for i in 0..3 {
        h[(i, POS + i)] = 1.0;
    }
    for i in 0..4 {
        h[(3 + i, QUAT + i)] = 1.0;
    }
    h
}

fn symmetrize(p: &StateMatrix) -> StateMatrix {
    (p + p.transpose()) * 0.5
}

pub fn ekf_predict(state: &FilterState, noise: &NoiseConfig, dt: f64) -> Result<FilterState> {
    state.check_finite()?;
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::Contract("ekf_predict requires a finite dt > 0"));
    }
    let f = process_jacobian(&state.x, dt);
    let x = process_model(&state.x, dt);
    let p = f * state.p * f.transpose() + noise.q * (dt / noise.dt_ref);
    Ok(FilterState {
        x,
        p: symmetrize(&p),
        last_update_time: state.last_update_time + dt,
    })
}

pub fn ekf_update(
    state: &FilterState,
    m: &PoseMeasurement,
    noise: &NoiseConfig,
) -> Result<FilterState> {
    ekf_update_with_r(state, m, &noise.r)
}

/// Measurement update with an explicit measurement covariance.
pub fn ekf_update_with_r(
    state: &FilterState,
    m: &PoseMeasurement,
    r: &MeasMatrix,
) -> Result<FilterState> {
    state.check_finite()?;
    if !m.z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    let mut z = m.z;
    // residuals are only meaningful within one hemisphere of the double cover
    let q_prior = state.x.fixed_rows::<4>(QUAT);
    if q_prior.dot(&z.fixed_rows::<4>(3)) < 0.0 {
        let flipped = -z.fixed_rows::<4>(3);
        z.fixed_rows_mut::<4>(3).copy_from(&flipped);
    }

    let h = measurement_jacobian();
    let predicted = h * state.x;
    let y = z - predicted;
    let s = h * state.p * h.transpose() + r;
    let s_inv = s
        .cholesky()
        .ok_or(Error::SingularInnovation)?
        .inverse();
    let k = state.p * h.transpose() * s_inv;

    let mut x = state.x + k * y;
    let qn = x.fixed_rows::<4>(QUAT).normalize();
    x.fixed_rows_mut::<4>(QUAT).copy_from(&qn);
    let p = (StateMatrix::identity() - k * h) * state.p;

    let updated = FilterState {
        x,
        p: symmetrize(&p),
        last_update_time: state.last_update_time.max(m.timestamp),
    };
    updated.check_finite()?;
    Ok(updated)
}

/// Filter mean pose, rate-limited relative to the previously emitted pose.
pub fn clamped_estimate(
    state: &FilterState,
    prev_emitted: &Pose,
    dt: f64,
    clamp: &ClampConfig,
) -> Pose {
    let mean = state.mean_pose();
    let max_step = clamp.v_clamp * dt;
    let delta = mean.position - prev_emitted.position;
    let dist = delta.norm();
    let position = if dist > max_step {
        prev_emitted.position + delta * (max_step / dist)
    } else {
        mean.position
    };
    let max_rot = clamp.omega_clamp * dt;
    let orientation = if geodesic_angle(&prev_emitted.orientation, &mean.orientation) > max_rot {
        rotate_toward(&prev_emitted.orientation, &mean.orientation, max_rot)
    } else {
        mean.orientation
    };
    Pose::new(position, orientation)
}
