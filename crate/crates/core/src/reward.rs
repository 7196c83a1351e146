//! Shaped reward and the six-stage coefficient schedule.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const STAGES: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub grasp: f64,
    pub dist: f64,
    pub dist_over: f64,
    pub align: f64,
    pub collision: f64,
    pub view: f64,
    pub gripper: f64,
    #[serde(rename = "move")]
    pub move_: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            grasp: 180.0,
            dist: -1.0,
            dist_over: -0.25,
            align: -0.015,
            collision: -1.5,
            view: -1.5,
            gripper: -0.3,
            move_: -0.005,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let penalties = [
            self.dist,
            self.dist_over,
            self.align,
            self.collision,
            self.view,
            self.gripper,
            self.move_,
        ];
        if self.grasp <= 0.0 || penalties.iter().any(|&p| p > 0.0) {
            return Err(Error::InvalidConfig(
                "grasp reward must be positive and penalties non-positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCoefficients {
    pub stage: u8,
    pub lambda_dist: f64,
    pub lambda_dist_over: f64,
    pub lambda_align: f64,
    pub lambda_collision: f64,
    pub lambda_view: f64,
    pub lambda_gripper: f64,
    pub lambda_move: f64,
    pub strict_view_reset: bool,
    pub max_object_speed: f64,
    pub control_period: f64,
    pub randomized_start: bool,
    /// Object motion includes rotation.
    pub full_pose_motion: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TickEvents {
    pub grasped: bool,
    pub collided: bool,
    pub out_of_view: bool,
    pub premature_close: bool,
    pub keypoint_distance: f64,
    pub alignment_error: f64,
    pub action_magnitude: f64,
    pub over_distance: bool,
}

pub fn stage_coefficients(stage: u8) -> Result<StageCoefficients> {
    let base = StageCoefficients {
        stage: 0,
        lambda_dist: 1.0,
        lambda_dist_over: 1.0,
        lambda_align: 1.0,
        lambda_collision: 1.0,
        lambda_view: 1.0,
        lambda_gripper: 1.0,
        lambda_move: 1.0,
        strict_view_reset: false,
        max_object_speed: 0.03,
        control_period: 0.05,
        randomized_start: false,
        full_pose_motion: false,
    };
    let first = StageCoefficients {
        stage: 1,
        lambda_dist: 2.0,
        lambda_dist_over: 6.0,
        lambda_align: 2.0,
        lambda_collision: 10.0,
        lambda_view: 10.0,
        strict_view_reset: true,
        ..base
    };
    let second = StageCoefficients {
        stage: 2,
        max_object_speed: 0.125,
        randomized_start: true,
        ..first
    };
    let third = StageCoefficients {
        stage: 3,
        lambda_view: 60.0,
        lambda_align: 4.0,
        ..second
    };
    let fourth = StageCoefficients {
        stage: 4,
        control_period: 0.025,
        full_pose_motion: true,
        ..third
    };
    let fifth = StageCoefficients {
        stage: 5,
        lambda_view: 80.0,
        lambda_collision: 80.0,
        lambda_align: 8.0,
        ..fourth
    };
    match stage {
        0 => Ok(base),
        1 => Ok(first),
        2 => Ok(second),
        3 => Ok(third),
        4 => Ok(fourth),
        5 => Ok(fifth),
        s => Err(Error::StageOutOfRange(s)),
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Per-tick reward. The grasp bonus is never scaled.
pub fn compute_reward(events: &TickEvents, w: &RewardWeights, c: &StageCoefficients) -> f64 {
    w.grasp * flag(events.grasped)
        + c.lambda_dist * w.dist * events.keypoint_distance
        + c.lambda_dist_over * w.dist_over * flag(events.over_distance)
        + c.lambda_align * w.align * events.alignment_error
        + c.lambda_collision * w.collision * flag(events.collided)
        + c.lambda_view * w.view * flag(events.out_of_view)
        + c.lambda_gripper * w.gripper * flag(events.premature_close)
        + c.lambda_move * w.move_ * events.action_magnitude
}

/// Promotes at most one stage when the mean episode reward reaches the
/// current stage's threshold; the last stage is absorbing.
pub fn curriculum_advance(mean_episode_reward: f64, current: u8, thresholds: &[f64]) -> Result<u8> {
    if current >= STAGES {
        return Err(Error::StageOutOfRange(current));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("curriculum thresholds must increase".into()));
    }
    if current == STAGES - 1 {
        return Ok(current);
    }
    match thresholds.get(current as usize) {
        Some(&t) if mean_episode_reward >= t => Ok(current + 1),
        _ => Ok(current),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub thresholds: Vec<f64>,
    pub weights: RewardWeights,
    /// Distance above which the over-distance penalty fires (m).
    pub over_distance: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![40.0, 60.0, 80.0, 100.0, 130.0],
            weights: RewardWeights::default(),
            over_distance: 0.25,
        }
    }
}
