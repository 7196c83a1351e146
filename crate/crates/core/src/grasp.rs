//! Synthetic grasp candidates, selection, triggering, and failure detection.
//!
//! Gripper frame: +z is the approach axis, x the finger closing axis, and
//! the palm sits at the origin.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{frame_from_xz, geodesic_angle, Pose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub pose: Pose,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspPool {
    /// World-frame candidates at generation time, best score first.
    pub candidates: Vec<GraspCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjGraspTransform {
    pub offset: Pose,
}

impl ObjGraspTransform {
    /// Grasp pose for the object at `object_pose`.
    pub fn apply(&self, object_pose: &Pose) -> Pose {
        object_pose.compose(&self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspAttempt {
    pub triggered_at: f64,
    pub success: bool,
    pub retries_used: u32,
}

/// Result of closing the fingers once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptOutcome {
    /// Fingers closed around the object within tolerance.
    pub physical: bool,
    /// Held after the slip draw.
    pub success: bool,
    pub position_error: f64,
    pub angle_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspTolerances {
    /// Trigger thresholds.
    pub eps_pos: f64,
    pub eps_ang: f64,
    /// Physical success thresholds at closure.
    pub delta_pos: f64,
    pub delta_ang: f64,
    pub slip_prob: f64,
    pub stabilization_ticks: u32,
    pub max_retries: u32,
    pub closed_threshold: f64,
    /// Retreat along the approach axis after a failed attempt (m).
    pub backoff: f64,
    pub finger_depth: f64,
    pub pool_size: usize,
}

impl Default for GraspTolerances {
    fn default() -> Self {
        Self {
            eps_pos: 0.01,
            eps_ang: 10f64.to_radians(),
            delta_pos: 0.015,
            delta_ang: 15f64.to_radians(),
            slip_prob: 0.0,
            stabilization_ticks: 6,
            max_retries: 3,
            closed_threshold: 0.01,
            backoff: 0.05,
            finger_depth: 0.02,
            pool_size: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionWeights {
    pub w_t: f64,
    pub w_r: f64,
    pub w_s: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self {
            w_t: 1.0,
            w_r: 0.3,
            w_s: 0.05,
        }
    }
}

/// Object-frame grasp offsets: a top-down grasp, then `k - 1` side grasps
/// at evenly spaced yaw.
pub fn grasp_offsets(extent: &Vector3<f64>, k: usize, finger_depth: f64) -> Result<Vec<Pose>> {
    if k == 0 {
        return Err(Error::EmptyGraspPool);
    }
    let half = extent * 0.5;
    let top_q = frame_from_xz(&Vector3::x(), &-Vector3::z()).ok_or(Error::Contract("top frame"))?;
    let mut out = vec![Pose::new(Vector3::new(0.0, 0.0, half.z + finger_depth), top_q)];
    let sides = k - 1;
    for j in 0..sides {
        let yaw = 2.0 * PI * j as f64 / sides as f64;
        let d = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let reach = d.x.abs() * half.x + d.y.abs() * half.y + finger_depth;
        let q = frame_from_xz(&Vector3::z().cross(&d), &d).ok_or(Error::Contract("side frame"))?;
        out.push(Pose::new(-d * reach, q));
    }
    Ok(out)
}

/// World-frame candidate pool for the object at `object_pose`. Scores fall
/// linearly with the approach axis' deviation from straight down.
pub fn generate_grasp_pool(
    object_pose: &Pose,
    object_extent: &Vector3<f64>,
    k: usize,
    finger_depth: f64,
) -> Result<GraspPool> {
    let mut candidates: Vec<GraspCandidate> = grasp_offsets(object_extent, k, finger_depth)?
        .iter()
        .map(|off| {
            let pose = object_pose.compose(off);
            let deviation = pose.axis(2).dot(&-Vector3::z()).clamp(-1.0, 1.0).acos();
            GraspCandidate {
                pose,
                score: 1.0 - deviation / PI,
            }
        })
        .collect();
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(GraspPool { candidates })
}

pub fn compute_obj_grasp_transform(object_pose: &Pose, selected: &Pose) -> ObjGraspTransform {
    ObjGraspTransform {
        offset: object_pose.inverse().compose(selected),
    }
}

pub fn selection_cost(gripper: &Pose, candidate: &GraspCandidate, w: &SelectionWeights) -> f64 {
    w.w_t * (candidate.pose.position - gripper.position).norm()
        + w.w_r * geodesic_angle(&gripper.orientation, &candidate.pose.orientation)
        - w.w_s * candidate.score
}

/// Index of the lowest-cost candidate; the earliest wins ties.
pub fn select_best_grasp(
    gripper: &Pose,
    candidates: &[GraspCandidate],
    weights: &SelectionWeights,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let cost = selection_cost(gripper, c, weights);
        if best.is_none_or(|(_, b)| cost < b) {
            best = Some((i, cost));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyGraspPool)
}

pub fn grasp_trigger(gripper: &Pose, grasp: &Pose, eps_pos: f64, eps_ang: f64) -> bool {
    (gripper.position - grasp.position).norm() < eps_pos
        && geodesic_angle(&gripper.orientation, &grasp.orientation) < eps_ang
}

/// Closure outcome against the true grasp pose, followed by the slip draw.
pub fn attempt_grasp(
    gripper: &Pose,
    grasp_true: &Pose,
    tol: &GraspTolerances,
    rng: &mut impl Rng,
) -> AttemptOutcome {
    let position_error = (gripper.position - grasp_true.position).norm();
    let angle_error = geodesic_angle(&gripper.orientation, &grasp_true.orientation);
    let physical = position_error <= tol.delta_pos && angle_error <= tol.delta_ang;
    let success = physical && !rng.random_bool(tol.slip_prob.clamp(0.0, 1.0));
    AttemptOutcome {
        physical,
        success,
        position_error,
        angle_error,
    }
}

/// Fingers closed past the threshold found nothing to hold.
pub fn detect_grasp_failure(gripper_width: f64, closed_threshold: f64) -> bool {
    gripper_width < closed_threshold
}

/// Width at which the fingers meet an object box, measured along the closing axis.
pub fn contact_width(object_pose: &Pose, extent: &Vector3<f64>, gripper: &Pose) -> f64 {
    let x = gripper.axis(0);
    (0..3).map(|i| x.dot(&object_pose.axis(i)).abs() * extent[i]).sum()
}

/// Rotation by half a turn about the approach axis; the two-finger gripper
/// reaches the same grasp either way.
pub fn flipped(grasp: &Pose) -> Pose {
    Pose::new(
        grasp.position,
        grasp.orientation * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI),
    )
}
