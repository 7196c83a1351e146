//! Observation vector and the scripted pursuit policy.
//!
//! Twists are expressed in the world frame.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{geodesic_angle, rotation_error, Pose, Twist};
use crate::grasp::{grasp_trigger, GraspTolerances};
use crate::world::GRIPPER_MAX_WIDTH;

/// Fingertip distance from the palm along the approach axis.
pub const FINGER_LENGTH: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Palm, left fingertip, right fingertip.
    pub p_g: [Vector3<f64>; 3],
    pub e_g: [Vector3<f64>; 3],
    pub delta_g: [Vector3<f64>; 3],
    pub gripper_open: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub twist: Twist,
    pub gripper_close: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Standoff,
    Approach,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlGains {
    pub k_p: f64,
    pub k_r: f64,
    pub max_linear: f64,
    pub max_angular: f64,
    /// Weight of the target-motion feedforward term.
    pub k_ff: f64,
    pub standoff: f64,
    pub align_threshold: f64,
    pub standoff_tolerance: f64,
    /// Cap on closing speed along the approach axis during the final descent.
    pub approach_speed: f64,
    /// Cap on how fast wrist rotation sweeps the target across the camera
    /// (m/s at the target's range).
    pub view_sweep: f64,
    pub dt: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            k_p: 2.0,
            k_r: 2.0,
            max_linear: 0.20,
            max_angular: 1.5,
            k_ff: 1.0,
            standoff: 0.06,
            align_threshold: 10f64.to_radians(),
            standoff_tolerance: 0.02,
            approach_speed: 0.02,
            view_sweep: 0.2,
            dt: 0.05,
        }
    }
}

pub fn keypoints(pose: &Pose) -> [Vector3<f64>; 3] {
    let hw = GRIPPER_MAX_WIDTH * 0.5;
    [
        pose.position,
        pose.transform_point(&Vector3::new(hw, 0.0, FINGER_LENGTH)),
        pose.transform_point(&Vector3::new(-hw, 0.0, FINGER_LENGTH)),
    ]
}

pub fn build_observation(
    target: &Pose,
    gripper: &Pose,
    prev_target: &Pose,
    gripper_open: bool,
) -> Observation {
    let p_g = keypoints(gripper);
    let p_o = keypoints(target);
    let p_prev = keypoints(prev_target);
    Observation {
        p_g,
        e_g: std::array::from_fn(|i| p_g[i] - p_o[i]),
        delta_g: std::array::from_fn(|i| p_o[i] - p_prev[i]),
        gripper_open,
    }
}

fn clamp_norm(v: Vector3<f64>, cap: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > cap {
        v * (cap / n)
    } else {
        v
    }
}

/// Point the gripper steers to in `phase`: the grasp itself, or a point
/// `standoff` back along its approach axis.
pub fn phase_goal(target: &Pose, phase: Phase, gains: &ControlGains) -> Vector3<f64> {
    match phase {
        Phase::Standoff => target.position - target.axis(2) * gains.standoff,
        Phase::Approach | Phase::Close => target.position,
    }
}

/// Standoff → Approach once aligned and hovering at the standoff point;
/// back to Standoff when alignment or lateral offset degrade.
pub fn next_phase(target: &Pose, gripper: &Pose, phase: Phase, gains: &ControlGains) -> Phase {
    let angle = geodesic_angle(&gripper.orientation, &target.orientation);
    match phase {
        Phase::Standoff => {
            let err = (phase_goal(target, phase, gains) - gripper.position).norm();
            if angle < gains.align_threshold && err < gains.standoff_tolerance {
                Phase::Approach
            } else {
                Phase::Standoff
            }
        }
        Phase::Approach => {
            let a = target.axis(2);
            let d = gripper.position - target.position;
            let lateral = (d - a * a.dot(&d)).norm();
            if angle > 2.0 * gains.align_threshold || lateral > 2.0 * gains.standoff_tolerance {
                Phase::Standoff
            } else {
                Phase::Approach
            }
        }
        Phase::Close => Phase::Close,
    }
}

/// Proportional pursuit of the phase goal with target-motion feedforward.
pub fn pursue(
    obs: &Observation,
    target: &Pose,
    gripper: &Pose,
    phase: Phase,
    gains: &ControlGains,
    tol: &GraspTolerances,
) -> Command {
    if phase == Phase::Close {
        return Command {
            twist: Twist::default(),
            gripper_close: true,
        };
    }
    let mut v = (phase_goal(target, phase, gains) - gripper.position) * gains.k_p;
    if phase == Phase::Approach {
        let a = target.axis(2);
        let along = v.dot(&a);
        if along > gains.approach_speed {
            v -= a * (along - gains.approach_speed);
        }
    }
    let drift = obs.delta_g.iter().sum::<Vector3<f64>>() / (3.0 * gains.dt);
    v += drift * gains.k_ff;
    let w = rotation_error(&gripper.orientation, &target.orientation) * gains.k_r;
    let range = (target.position - gripper.position).norm();
    let max_w = if range > 0.0 {
        gains.max_angular.min(gains.view_sweep / range)
    } else {
        gains.max_angular
    };
    Command {
        twist: Twist {
            linear: clamp_norm(v, gains.max_linear),
            angular: clamp_norm(w, max_w),
        },
        gripper_close: phase == Phase::Approach
            && grasp_trigger(gripper, target, tol.eps_pos, tol.eps_ang),
    }
}

/// Same law toward a viewpoint; never closes the fingers.
pub fn recovery_pursue(recovery_target: &Pose, gripper: &Pose, gains: &ControlGains) -> Command {
    let v = (recovery_target.position - gripper.position) * gains.k_p;
    let w = rotation_error(&gripper.orientation, &recovery_target.orientation) * gains.k_r;
    Command {
        twist: Twist {
            linear: clamp_norm(v, gains.max_linear),
            angular: clamp_norm(w, gains.max_angular),
        },
        gripper_close: false,
    }
}

/// Where a learned policy would plug in.
pub trait Policy {
    fn act(&mut self, obs: &Observation, target: &Pose, gripper: &Pose) -> Command;
}

/// Stateful wrapper around [`pursue`] that carries the phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPursuit {
    pub gains: ControlGains,
    pub tol: GraspTolerances,
    pub phase: Phase,
}

impl ScriptedPursuit {
    pub fn new(gains: ControlGains, tol: GraspTolerances) -> Self {
        Self {
            gains,
            tol,
            phase: Phase::Standoff,
        }
    }
}

impl Policy for ScriptedPursuit {
    fn act(&mut self, obs: &Observation, target: &Pose, gripper: &Pose) -> Command {
        self.phase = next_phase(target, gripper, self.phase, &self.gains);
        pursue(obs, target, gripper, self.phase, &self.gains, &self.tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use crate::geometry::frame_from_xz;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn down() -> UnitQuaternion<f64> {
        frame_from_xz(&Vector3::y(), &-Vector3::z()).unwrap()
    }

    fn step(gripper: &Pose, cmd: &Command, dt: f64) -> Pose {
        Pose::new(
            gripper.position + cmd.twist.linear * dt,
            UnitQuaternion::from_scaled_axis(cmd.twist.angular * dt) * gripper.orientation,
        )
    }

    #[test]
    fn keypoints_are_rigid() {
        let pose = Pose::new(Vector3::new(0.1, 0.2, 0.3), UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1));
        let k = keypoints(&pose);
        let local = [
            Vector3::zeros(),
            Vector3::new(0.0425, 0.0, 0.08),
            Vector3::new(-0.0425, 0.0, 0.08),
        ];
        for i in 0..3 {
            assert_relative_eq!(pose.inverse().transform_point(&k[i]), local[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn observation_examples() {
        let pose = Pose::new(Vector3::new(0.5, 0.0, 0.4), down());
        let obs = build_observation(&pose, &pose, &pose, true);
        for i in 0..3 {
            assert_eq!(obs.e_g[i], Vector3::zeros());
            assert_eq!(obs.delta_g[i], Vector3::zeros());
        }
        let moved = Pose::new(pose.position + Vector3::new(0.01, 0.0, 0.0), pose.orientation);
        let obs = build_observation(&moved, &pose, &pose, true);
        for d in obs.delta_g {
            assert_relative_eq!(d, Vector3::new(0.01, 0.0, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn at_target_is_quiet_and_closes() {
        let g = ControlGains::default();
        let tol = GraspTolerances::default();
        let pose = Pose::new(Vector3::new(0.5, 0.0, 0.4), down());
        let obs = build_observation(&pose, &pose, &pose, true);
        let cmd = pursue(&obs, &pose, &pose, Phase::Approach, &g, &tol);
        assert!(cmd.twist.linear.norm() < 1e-12);
        assert!(cmd.twist.angular.norm() < 1e-12);
        assert!(cmd.gripper_close);
    }

    #[test]
    fn far_target_saturates() {
        let g = ControlGains::default();
        let tol = GraspTolerances::default();
        let target = Pose::new(Vector3::new(1.5, 0.0, 0.4), down());
        let gripper = Pose::new(Vector3::new(0.5, 0.0, 0.4), down());
        let obs = build_observation(&target, &gripper, &target, true);
        let cmd = pursue(&obs, &target, &gripper, Phase::Standoff, &g, &tol);
        assert_relative_eq!(cmd.twist.linear.norm(), 0.2, epsilon = 1e-12);
        assert!(cmd.twist.linear.x > 0.19);
        assert!(!cmd.gripper_close);
    }

    #[test]
    fn wrist_rate_shrinks_with_range() {
        let g = ControlGains::default();
        let tol = GraspTolerances::default();
        let twisted = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 1.0) * down();
        let rate = |range: f64| {
            let gripper = Pose::new(Vector3::new(0.5, 0.0, 0.4 + range), down());
            let target = Pose::new(Vector3::new(0.5, 0.0, 0.4), twisted);
            let obs = build_observation(&target, &gripper, &target, true);
            pursue(&obs, &target, &gripper, Phase::Standoff, &g, &tol).twist.angular.norm()
        };
        assert_relative_eq!(rate(0.5), g.view_sweep / 0.5, epsilon = 1e-12);
        assert_relative_eq!(rate(0.1), g.max_angular, epsilon = 1e-12);
    }

    fn chase(k_ff: f64, speed: f64, ticks: usize) -> (Vec<f64>, Vec<bool>) {
        let g = ControlGains { k_ff, ..Default::default() };
        let tol = GraspTolerances::default();
        let v = Vector3::new(speed, 0.0, 0.0);
        let mut target = Pose::new(Vector3::new(0.4, 0.0, 0.4), down());
        let mut prev = target;
        let mut gripper = Pose::new(Vector3::new(0.35, 0.03, 0.4), down());
        let (mut errs, mut triggers) = (Vec::new(), Vec::new());
        for _ in 0..ticks {
            let obs = build_observation(&target, &gripper, &prev, true);
            let cmd = pursue(&obs, &target, &gripper, Phase::Approach, &g, &tol);
            triggers.push(cmd.gripper_close);
            gripper = step(&gripper, &cmd, g.dt);
            prev = target;
            target.position += v * g.dt;
            errs.push((target.position - gripper.position).norm());
        }
        (errs, triggers)
    }

    #[test]
    fn moving_target_lag_and_capture() {
        let (errs, _) = chase(0.0, 0.05, 400);
        let lag = errs[300..].iter().sum::<f64>() / 100.0;
        let expected = 0.05 / 2.0;
        assert!((lag - expected).abs() <= 0.2 * expected, "lag {lag}");

        let (errs, triggers) = chase(1.0, 0.05, 400);
        assert!(triggers.iter().any(|&t| t));
        assert!(errs[100..].iter().all(|&e| e < 0.01));
    }

    #[test]
    fn recovery_examples() {
        let g = ControlGains::default();
        let pose = Pose::new(Vector3::new(0.5, 0.0, 0.6), down());
        let cmd = recovery_pursue(&pose, &pose, &g);
        assert!(cmd.twist.linear.norm() < 1e-12 && cmd.twist.angular.norm() < 1e-12);
        assert!(!cmd.gripper_close);
        // viewpoint behind the gripper along its approach axis
        let behind = Pose::new(pose.position - pose.axis(2) * 0.1, pose.orientation);
        let cmd = recovery_pursue(&behind, &pose, &g);
        assert!(cmd.twist.linear.dot(&pose.axis(2)) < 0.0);
    }

    #[test]
    fn static_target_liveness() {
        let g = ControlGains::default();
        let tol = GraspTolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ws = crate::world::Workspace::karl();
        for _ in 0..200 {
            let obj = Vector3::new(
                rng.random_range(ws.min.x..ws.max.x),
                rng.random_range(ws.min.y..ws.max.y),
                rng.random_range(ws.min.z..ws.max.z),
            );
            let yaw = rng.random_range(-PI..PI);
            let target = Pose::new(
                obj + Vector3::new(0.0, 0.0, 0.06),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * down(),
            );
            let start = Vector3::new(
                rng.random_range(ws.min.x..ws.max.x),
                rng.random_range(ws.min.y..ws.max.y),
                rng.random_range(ws.min.z..ws.max.z),
            );
            let mut policy = ScriptedPursuit::new(g, tol);
            let mut gripper = Pose::new(start, down());
            let fired = (0..300).any(|_| {
                let obs = build_observation(&target, &gripper, &target, true);
                let cmd = policy.act(&obs, &target, &gripper);
                gripper = step(&gripper, &cmd, g.dt);
                cmd.gripper_close
            });
            assert!(fired);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn twist_caps_hold(
            seed in 0u64..u64::MAX,
            approach in proptest::bool::ANY,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pose = || Pose::new(
                Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
                UnitQuaternion::from_euler_angles(rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI)),
            );
            let (t, g, p) = (pose(), pose(), pose());
            let gains = ControlGains::default();
            let obs = build_observation(&t, &g, &p, true);
            let phase = if approach { Phase::Approach } else { Phase::Standoff };
            let cmd = pursue(&obs, &t, &g, phase, &gains, &GraspTolerances::default());
            prop_assert!(cmd.twist.linear.norm() <= gains.max_linear + 1e-12);
            prop_assert!(cmd.twist.angular.norm() <= gains.max_angular + 1e-12);
            let rec = recovery_pursue(&t, &g, &gains);
            prop_assert!(rec.twist.linear.norm() <= gains.max_linear + 1e-12);
            prop_assert!(rec.twist.angular.norm() <= gains.max_angular + 1e-12);
        }

        #[test]
        fn keypoint_error_translation_equivariant(
            seed in 0u64..u64::MAX,
            sx in -1.0f64..1.0, sy in -1.0f64..1.0, sz in -1.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pose = || Pose::new(
                Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                UnitQuaternion::from_euler_angles(rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI)),
            );
            let (t, g) = (pose(), pose());
            let s = Vector3::new(sx, sy, sz);
            let shift = |p: &Pose| Pose::new(p.position + s, p.orientation);
            let a = build_observation(&t, &g, &t, true);
            let b = build_observation(&shift(&t), &shift(&g), &shift(&t), true);
            for i in 0..3 {
                prop_assert!((a.e_g[i] - b.e_g[i]).norm() < 1e-9);
            }
        }
    }
}
