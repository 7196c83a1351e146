use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use crate::control::{build_observation, phase_goal, pursue, recovery_pursue, Command, Phase, Policy, ScriptedPursuit};
use crate::ekf::{ekf_init, StateVector};
use crate::geometry::{geodesic_angle, Pose, Twist};
use crate::grasp::{
    attempt_grasp, compute_obj_grasp_transform, contact_width, detect_grasp_failure, flipped,
    generate_grasp_pool, select_best_grasp, GraspCandidate, ObjGraspTransform,
};
use crate::perception::{
    perceive, recovery_viewpoint, tracking_step, visibility_test, TrackerMode, TrackerState,
    TrackingParams,
};
use crate::reward::{compute_reward, stage_coefficients, TickEvents};
use crate::world::{
    collision_check, gripper_step, init_world, object_step, sample_initial_object_pose, Aabb,
    GripperCommand, MotionPattern, Workspace, WorkspaceName, WorldState, GRIPPER_MAX_WIDTH,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Regular,
    Complex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub sim: SimConfig,
    pub workspace: WorkspaceName,
    pub pattern: MotionPattern,
    pub ekf_enabled: bool,
    pub stage: u8,
    pub scene: SceneKind,
    pub record_trace: bool,
}

impl EpisodeConfig {
    pub fn new(sim: SimConfig, workspace: WorkspaceName, pattern: MotionPattern) -> Self {
        Self {
            sim,
            workspace,
            pattern,
            ekf_enabled: true,
            stage: 5,
            scene: SceneKind::Regular,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.pattern.validate().map_err(Error::InvalidConfig)?;
        stage_coefficients(self.stage)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Timeout,
    Collision,
    TrackingFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub t: f64,
    pub object: Vector3<f64>,
    pub estimate: Vector3<f64>,
    pub gripper: Vector3<f64>,
    pub gripper_width: f64,
    pub mode: TrackerMode,
    pub visible: bool,
    pub phase: String,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub outcome: Outcome,
    pub time_to_grasp: Option<f64>,
    /// Simulated time at termination.
    pub end_time: f64,
    pub retries: u32,
    pub loss_ticks: u32,
    pub reward_total: f64,
    /// Triggers fired while the tracker was not locked.
    pub premature_grasps: u32,
    pub trace: Option<Vec<TraceRecord>>,
}

/// Flags raised on the final tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Terminal {
    pub collided: bool,
    pub tracking_failed: bool,
    pub lifted: bool,
}

/// Collision > TrackingFailure > Success > Timeout.
pub fn classify_outcome(terminal: &Terminal) -> Outcome {
    if terminal.collided {
        Outcome::Collision
    } else if terminal.tracking_failed {
        Outcome::TrackingFailure
    } else if terminal.lifted {
        Outcome::Success
    } else {
        Outcome::Timeout
    }
}

/// Tracks how long the controller-facing estimate has been far from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossMonitor {
    pub far_ticks: u64,
}

impl LossMonitor {
    pub fn update(&mut self, error: f64, cfg: &super::config::TrackingFailureConfig, dt: f64) -> bool {
        if error > cfg.distance {
            self.far_ticks += 1;
        } else {
            self.far_ticks = 0;
        }
        self.far_ticks as f64 * dt > cfg.duration + 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GraspPhase {
    Pursuit,
    Closing { offset: usize },
    Stabilizing { ticks: u32, hold: Pose },
    Reopening { offset: usize },
    Exhausted,
}

impl GraspPhase {
    fn label(&self, policy: Phase) -> String {
        match self {
            GraspPhase::Pursuit | GraspPhase::Exhausted => format!("{policy:?}").to_lowercase(),
            GraspPhase::Closing { .. } => "closing".into(),
            GraspPhase::Stabilizing { .. } => "stabilizing".into(),
            GraspPhase::Reopening { .. } => "reopening".into(),
        }
    }
}

/// Walls parallel to the object's path at ±`wall_offset`.
fn corridor_walls(world: &WorldState, sim: &SimConfig) -> Vec<Aabb> {
    let s = &sim.scene;
    let p = world.object_pose.position;
    let dir = Vector3::new(world.object_twist.linear.x, world.object_twist.linear.y, 0.0)
        .try_normalize(1e-9)
        .unwrap_or_else(Vector3::x);
    let side = Vector3::new(-dir.y, dir.x, 0.0);
    [-1.0, 1.0]
        .iter()
        .map(|sign| {
            let c = p + side * (sign * s.wall_offset) + dir * (s.wall_length * 0.25);
            let half_along = dir * (s.wall_length * 0.5);
            let half_side = side * (s.wall_thickness * 0.5);
            let half = Vector3::new(
                half_along.x.abs() + half_side.x.abs(),
                half_along.y.abs() + half_side.y.abs(),
                s.wall_height * 0.5,
            );
            let center = Vector3::new(c.x, c.y, p.z - s.object_extent.z * 0.5 + s.wall_height * 0.5);
            Aabb::from_center(center, half)
        })
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One closed-loop grasping episode.
pub fn run_episode(cfg: &EpisodeConfig, seed: u64) -> Result<EpisodeResult> {
    cfg.validate()?;
    let sim = &cfg.sim;
    let dt = sim.dt;
    let mut world_rng = stream(seed, 1);
    let mut sensor_rng = stream(seed, 2);
    let mut grasp_rng = stream(seed, 3);

    let workspace = Workspace::named(cfg.workspace);
    let mut pattern = sim.motion;
    pattern.kind = cfg.pattern.kind;
    pattern.speed_range = cfg.pattern.speed_range;
    pattern.disrupt_prob = cfg.pattern.disrupt_prob;
    let object0 = sample_initial_object_pose(&workspace, sim.scene.yaw_range, &mut world_rng);
    let mut world = init_world(
        workspace,
        sim.scene.reach,
        object0,
        sim.scene.object_extent,
        sim.scene.home_pose(),
        vec![],
        &pattern,
        &mut world_rng,
    );
    if cfg.scene == SceneKind::Complex {
        world.obstacles = corridor_walls(&world, sim);
    }

    // initial registration
    let camera = &sim.camera;
    let cam0 = camera.world_pose(&world.gripper_pose);
    let visible0 = visibility_test(camera, &cam0, &world.object_pose.position, &world.obstacles);
    let est0 = {
        let s = &sim.sensor;
        let mut g = || rand::Rng::sample::<f64, _>(&mut sensor_rng, rand_distr::StandardNormal);
        let dp = Vector3::new(g(), g(), g()) * s.reg_sigma_pos;
        let dr = Vector3::new(g(), g(), g()) * s.reg_sigma_rot;
        Pose::new(
            world.object_pose.position + dp,
            nalgebra::UnitQuaternion::from_scaled_axis(dr) * world.object_pose.orientation,
        )
    };
    let pool = generate_grasp_pool(&est0, &sim.scene.object_extent, sim.grasp.pool_size, sim.grasp.finger_depth)?;
    let offsets: Vec<(ObjGraspTransform, f64)> = pool
        .candidates
        .iter()
        .flat_map(|c| {
            [c.pose, flipped(&c.pose)]
                .map(|p| (compute_obj_grasp_transform(&est0, &p), c.score))
        })
        .collect();

    let mut ekf = ekf_init(&est0, &StateVector::repeat(sim.p0), 0.0)?;
    let mut tracker = TrackerState::locked(cam0.inverse().compose(&est0), est0);
    if !visible0 {
        tracker.mode = TrackerMode::Lost;
        tracker.loss_tick = Some(0);
    }
    let params = TrackingParams {
        noise: sim.ekf.to_config(),
        clamp: sim.clamp,
        refeed: sim.refeed,
        ekf_enabled: cfg.ekf_enabled,
    };
    let coeffs = stage_coefficients(cfg.stage)?;
    let weights = &sim.curriculum.weights;

    let mut policy = ScriptedPursuit::new(sim.control, sim.grasp);
    let mut phase = GraspPhase::Pursuit;
    let mut prev_estimate: Option<Pose> = None;
    let mut monitor = LossMonitor::default();
    let mut retries = 0u32;
    let mut loss_ticks = 0u32;
    let mut premature = 0u32;
    let mut reward_total = 0.0;
    let mut terminal = Terminal::default();
    let mut trace = cfg.record_trace.then(Vec::new);
    let mut end_time = sim.t_max;
    let mut time_to_grasp = None;

    for tick in 0..sim.ticks() {
        let t = tick as f64 * dt;
        let (frame, tr) = perceive(&world, camera, &tracker, &ekf, &sim.sensor, &mut sensor_rng)?;
        let cam_world = camera.world_pose(&world.gripper_pose);
        let (tr, filter, estimate) = tracking_step(&frame, &tr, &ekf, &cam_world, dt, &params)?;
        tracker = tr;
        ekf = filter;
        if tracker.mode != TrackerMode::Locked {
            loss_ticks += 1;
        }

        let candidates: Vec<GraspCandidate> = offsets
            .iter()
            .map(|(o, s)| GraspCandidate {
                pose: o.apply(&estimate),
                score: *s,
            })
            .collect();
        let best = select_best_grasp(&world.gripper_pose, &candidates, &sim.selection)?;
        let target = candidates[best].pose;
        // the same grasp offset applied to last tick's estimate, for the drift term
        let prev_of = |k: usize| prev_estimate.map_or(candidates[k].pose, |e| offsets[k].0.apply(&e));
        let prev = prev_of(best);
        let obs = build_observation(&target, &world.gripper_pose, &prev, world.gripper_width > 0.5 * GRIPPER_MAX_WIDTH);

        let gripper = world.gripper_pose;
        let mut events = TickEvents {
            out_of_view: !frame.visible,
            keypoint_distance: obs.e_g.iter().map(|e| e.norm()).sum::<f64>() / 3.0,
            alignment_error: geodesic_angle(&gripper.orientation, &target.orientation),
            ..Default::default()
        };
        events.over_distance = events.keypoint_distance > sim.curriculum.over_distance;

        let lost = tracker.mode != TrackerMode::Locked;
        let cmd: Command = match phase {
            GraspPhase::Pursuit | GraspPhase::Exhausted => {
                if lost && cfg.ekf_enabled {
                    let choice = recovery_viewpoint(&ekf, camera, &gripper, &world.obstacles, &sim.recovery, &mut sensor_rng)?;
                    policy.phase = Phase::Standoff;
                    recovery_pursue(&choice.pose, &gripper, &sim.control)
                } else {
                    let mut c = policy.act(&obs, &target, &gripper);
                    if phase == GraspPhase::Exhausted {
                        c.gripper_close = false;
                    }
                    if c.gripper_close {
                        if lost {
                            premature += 1;
                            events.premature_close = true;
                        }
                        phase = GraspPhase::Closing { offset: best };
                        c.twist = Twist::default();
                    }
                    c
                }
            }
            GraspPhase::Closing { offset } => {
                // keep riding along with the grasp pose while the fingers close
                let hold = candidates[offset].pose;
                let o = build_observation(&hold, &gripper, &prev_of(offset), false);
                let mut c = pursue(&o, &hold, &gripper, Phase::Approach, &sim.control, &sim.grasp);
                c.gripper_close = true;
                c
            }
            GraspPhase::Stabilizing { .. } => Command {
                twist: Twist::default(),
                gripper_close: true,
            },
            GraspPhase::Reopening { offset } => {
                // back off to the moving standoff point while the fingers open
                let hold = candidates[offset].pose;
                let o = build_observation(&hold, &gripper, &prev_of(offset), true);
                let mut c = pursue(&o, &hold, &gripper, Phase::Standoff, &sim.control, &sim.grasp);
                c.gripper_close = false;
                c
            }
        };
        events.action_magnitude = cmd.twist.linear.norm() + cmd.twist.angular.norm();
        prev_estimate = Some(estimate);

        // actuate the gripper, then move the object
        let gcmd = GripperCommand {
            twist: cmd.twist,
            close: cmd.gripper_close,
        };
        let width_before = world.gripper_width;
        world = gripper_step(&world, &gcmd, dt, &sim.gripper);
        match phase {
            GraspPhase::Stabilizing { hold, .. } => {
                world.object_pose = world.gripper_pose.compose(&hold);
                world.object_twist = Twist::default();
                world.time += dt;
            }
            _ => world = object_step(&world, &pattern, dt, &mut world_rng),
        }

        // grasp bookkeeping
        match phase {
            GraspPhase::Closing { offset } => {
                let width_needed = contact_width(&world.object_pose, &world.object_extent, &world.gripper_pose);
                if world.gripper_contact.is_none() && world.gripper_width <= width_needed && width_before > width_needed {
                    let true_grasp = offsets[offset].0.apply(&world.object_pose);
                    let outcome = attempt_grasp(&world.gripper_pose, &true_grasp, &sim.grasp, &mut grasp_rng);
                    if outcome.success {
                        world.gripper_contact = Some(width_needed);
                        world.gripper_width = width_needed;
                        let hold = world.gripper_pose.inverse().compose(&world.object_pose);
                        phase = GraspPhase::Stabilizing { ticks: 0, hold };
                    }
                } else if detect_grasp_failure(world.gripper_width, sim.grasp.closed_threshold) {
                    phase = GraspPhase::Reopening { offset };
                }
            }
            GraspPhase::Stabilizing { ticks, hold } => {
                let ticks = ticks + 1;
                if ticks >= sim.grasp.stabilization_ticks {
                    terminal.lifted = true;
                    events.grasped = true;
                } else {
                    phase = GraspPhase::Stabilizing { ticks, hold };
                }
            }
            GraspPhase::Reopening { offset } => {
                let goal = phase_goal(&candidates[offset].pose, Phase::Standoff, &sim.control);
                if world.gripper_width >= GRIPPER_MAX_WIDTH - 1e-12
                    && (world.gripper_pose.position - goal).norm() < sim.control.standoff_tolerance
                {
                    world.gripper_contact = None;
                    policy.phase = Phase::Standoff;
                    if retries < sim.grasp.max_retries {
                        retries += 1;
                        phase = GraspPhase::Pursuit;
                    } else {
                        phase = GraspPhase::Exhausted;
                    }
                }
            }
            GraspPhase::Pursuit | GraspPhase::Exhausted => {}
        }

        let engaged = matches!(phase, GraspPhase::Closing { .. } | GraspPhase::Stabilizing { .. });
        terminal.collided = collision_check(&world, &sim.collision, engaged);
        events.collided = terminal.collided && !events.grasped;
        let err = (estimate.position - world.object_pose.position).norm();
        terminal.tracking_failed = monitor.update(err, &sim.tracking_failure, dt);

        let r = compute_reward(&events, weights, &coeffs);
        reward_total += r;
        if let Some(tr) = trace.as_mut() {
            tr.push(TraceRecord {
                tick,
                t: t + dt,
                object: world.object_pose.position,
                estimate: estimate.position,
                gripper: world.gripper_pose.position,
                gripper_width: world.gripper_width,
                mode: tracker.mode,
                visible: frame.visible,
                phase: phase.label(policy.phase),
                reward: r,
            });
        }
        if terminal.collided || terminal.tracking_failed || terminal.lifted {
            end_time = t + dt;
            break;
        }
    }

    let outcome = classify_outcome(&terminal);
    if outcome == Outcome::Success {
        time_to_grasp = Some(end_time);
    }
    Ok(EpisodeResult {
        seed,
        outcome,
        time_to_grasp,
        end_time,
        retries,
        loss_ticks,
        reward_total,
        premature_grasps: premature,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_cfg() -> EpisodeConfig {
        EpisodeConfig::new(SimConfig::default(), WorkspaceName::Earl, MotionPattern::linear_at(0.0))
    }

    #[test]
    fn static_object_is_grasped() {
        let r = run_episode(&static_cfg(), 0).unwrap();
        assert_eq!(r.outcome, Outcome::Success);
        assert!(r.time_to_grasp.unwrap() <= 15.0);
    }

    #[test]
    fn episodes_are_deterministic() {
        let mut cfg = EpisodeConfig::new(SimConfig::default(), WorkspaceName::Earl, MotionPattern::random());
        cfg.record_trace = true;
        let a = run_episode(&cfg, 21).unwrap();
        let b = run_episode(&cfg, 21).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn precedence() {
        let all = Terminal {
            collided: true,
            tracking_failed: true,
            lifted: true,
        };
        assert_eq!(classify_outcome(&all), Outcome::Collision);
        assert_eq!(
            classify_outcome(&Terminal { collided: false, ..all }),
            Outcome::TrackingFailure
        );
        assert_eq!(
            classify_outcome(&Terminal { lifted: true, ..Default::default() }),
            Outcome::Success
        );
        assert_eq!(classify_outcome(&Terminal::default()), Outcome::Timeout);
    }

    #[test]
    fn frozen_estimate_during_escape_is_tracking_failure() {
        let cfg = super::super::config::TrackingFailureConfig::default();
        let mut m = LossMonitor::default();
        let frozen = Vector3::zeros();
        let mut failed_at = None;
        for k in 0..60 {
            // the object leaves at 0.5 m/s for 3 s
            let t = (k + 1) as f64 * 0.05;
            let obj = Vector3::new((0.5 * t).min(1.5), 0.0, 0.0);
            if m.update((obj - frozen).norm(), &cfg, 0.05) && failed_at.is_none() {
                failed_at = Some(t);
            }
        }
        assert!(failed_at.is_some());
    }

    #[test]
    fn invalid_config_rejected_before_loop() {
        let mut cfg = static_cfg();
        cfg.stage = 9;
        assert!(run_episode(&cfg, 0).is_err());
        let mut cfg = static_cfg();
        cfg.sim.dt = 0.0;
        assert!(run_episode(&cfg, 0).is_err());
    }
}
