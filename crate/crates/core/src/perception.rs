//! Simulated eye-on-hand sensing: frustum visibility, a tracker that drops
//! lock on large inter-frame motion, delayed re-registration, and the
//! recovery viewpoint search used while the object is lost.

use std::f64::consts::PI;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ekf::{
    clamped_estimate, ekf_predict, ekf_update, ekf_update_with_r, ClampConfig, FilterState,
    NoiseConfig, PoseMeasurement, RefeedConfig, POS, QUAT,
};
use crate::geometry::{geodesic_angle, look_at, Pose};
use crate::world::{Aabb, WorldState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    /// Gripper → camera transform.
    pub mount_offset: Pose,
    pub hfov: f64,
    pub vfov: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            mount_offset: Pose::from_translation(0.0, 0.0, -0.10),
            hfov: 70f64.to_radians(),
            vfov: 55f64.to_radians(),
            min_range: 0.10,
            max_range: 1.50,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < PI;
        if !fov_ok(self.hfov) || !fov_ok(self.vfov) {
            return Err(Error::InvalidConfig("camera fov must lie in (0, pi)".into()));
        }
        if !(0.0 <= self.min_range && self.min_range < self.max_range) {
            return Err(Error::InvalidConfig("camera range must satisfy 0 <= min < max".into()));
        }
        if !self.mount_offset.is_finite() {
            return Err(Error::NonFinite("camera mount offset"));
        }
        Ok(())
    }

    pub fn world_pose(&self, gripper: &Pose) -> Pose {
        gripper.compose(&self.mount_offset)
    }

    /// Gripper pose that puts the camera at `camera_world`.
    pub fn gripper_for(&self, camera_world: &Pose) -> Pose {
        camera_world.compose(&self.mount_offset.inverse())
    }
}

/// Noise and timing of the simulated trackers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub sigma_pos: f64,
    pub sigma_rot: f64,
    pub reg_sigma_pos: f64,
    pub reg_sigma_rot: f64,
    /// Largest camera-frame object motion per tick the frame-to-frame tracker survives.
    pub lock_translation: f64,
    pub lock_rotation: f64,
    pub reregister_latency: u32,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            sigma_pos: 0.005,
            sigma_rot: 1f64.to_radians(),
            reg_sigma_pos: 0.008,
            reg_sigma_rot: 3f64.to_radians(),
            lock_translation: 0.02,
            lock_rotation: 5f64.to_radians(),
            reregister_latency: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub visible: bool,
    /// Object pose in the camera frame.
    pub measurement: Option<PoseMeasurement>,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackerMode {
    Locked,
    Lost,
    Reacquiring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    pub mode: TrackerMode,
    /// Last measured object pose, camera frame.
    pub last_tracked_pose: Pose,
    pub loss_tick: Option<u64>,
    pub use_reregistration: bool,
    pub tick: u64,
    /// True camera-frame object pose seen on the previous tick.
    pub prev_object_cam: Option<Pose>,
    pub reacquire_ticks: u32,
    pub loss_streak: u32,
    pub reregistrations: u32,
    pub last_world_measurement: Option<PoseMeasurement>,
    /// Last estimate handed to the controller.
    pub last_estimate: Pose,
}

impl TrackerState {
    /// Tracker locked on an initial registration.
    pub fn locked(object_cam: Pose, object_world: Pose) -> Self {
        Self {
            mode: TrackerMode::Locked,
            last_tracked_pose: object_cam,
            loss_tick: None,
            use_reregistration: false,
            tick: 0,
            prev_object_cam: Some(object_cam),
            reacquire_ticks: 0,
            loss_streak: 0,
            reregistrations: 0,
            last_world_measurement: Some(PoseMeasurement::from_pose(&object_world, 0.0)),
            last_estimate: object_world,
        }
    }
}

/// Parameters of the estimation branch of [`tracking_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingParams {
    pub noise: NoiseConfig,
    pub clamp: ClampConfig,
    pub refeed: RefeedConfig,
    /// When false the estimate holds the last tracked pose during loss.
    pub ekf_enabled: bool,
}

/// Frustum and line-of-sight test for a world point.
pub fn visibility_test(
    camera: &CameraModel,
    camera_world: &Pose,
    point: &Vector3<f64>,
    obstacles: &[Aabb],
) -> bool {
    let p = camera_world.inverse().transform_point(point);
    if p.z <= 0.0 {
        return false;
    }
    let range = p.norm();
    if range < camera.min_range || range > camera.max_range {
        return false;
    }
    if p.x.abs().atan2(p.z) > camera.hfov * 0.5 || p.y.abs().atan2(p.z) > camera.vfov * 0.5 {
        return false;
    }
    !obstacles
        .iter()
        .any(|o| o.segment_intersects(&camera_world.position, point))
}

fn perturb(pose: &Pose, sigma_pos: f64, sigma_rot: f64, rng: &mut impl Rng) -> Pose {
    let mut gauss = || rng.sample::<f64, _>(StandardNormal);
    let dp = Vector3::new(gauss(), gauss(), gauss()) * sigma_pos;
    let dr = Vector3::new(gauss(), gauss(), gauss()) * sigma_rot;
    Pose::new(
        pose.position + dp,
        UnitQuaternion::from_scaled_axis(dr) * pose.orientation,
    )
}

fn object_in_camera(world: &WorldState, camera: &CameraModel) -> (Pose, Pose) {
    let cam = camera.world_pose(&world.gripper_pose);
    (cam, cam.inverse().compose(&world.object_pose))
}

/// One camera frame. The frame-to-frame tracker emits a noisy camera-frame
/// pose only while locked, visible, and within the inter-frame motion limit;
/// otherwise a locked tracker drops to `Lost`.
pub fn sense(
    world: &WorldState,
    camera: &CameraModel,
    tracker: &TrackerState,
    noise: &SensorNoise,
    rng: &mut impl Rng,
) -> (SensorFrame, TrackerState) {
    let (cam, obj_cam) = object_in_camera(world, camera);
    let visible = visibility_test(camera, &cam, &world.object_pose.position, &world.obstacles);
    let small_motion = tracker.prev_object_cam.is_none_or(|prev| {
        prev.distance(&obj_cam) < noise.lock_translation
            && geodesic_angle(&prev.orientation, &obj_cam.orientation) < noise.lock_rotation
    });

    let mut next = tracker.clone();
    next.tick = tracker.tick + 1;
    next.prev_object_cam = Some(obj_cam);
    let mut frame = SensorFrame {
        visible,
        measurement: None,
        tick: tracker.tick,
    };
    if tracker.mode == TrackerMode::Locked {
        if visible && small_motion {
            let noisy = perturb(&obj_cam, noise.sigma_pos, noise.sigma_rot, rng);
            frame.measurement = Some(PoseMeasurement::from_pose(&noisy, world.time));
        } else {
            next.mode = TrackerMode::Lost;
            next.loss_tick = Some(tracker.tick);
        }
    }
    (frame, next)
}

/// Single-shot registration once the object is back in view. Produces a
/// measurement only after `reregister_latency` reacquisition ticks. The
/// warm start does not change the result.
pub fn reregister(
    world: &WorldState,
    camera: &CameraModel,
    tracker: &TrackerState,
    _ekf_mean_cam: &Pose,
    noise: &SensorNoise,
    rng: &mut impl Rng,
) -> Result<Option<PoseMeasurement>> {
    if tracker.mode != TrackerMode::Reacquiring {
        return Err(Error::Contract("reregister requires the reacquiring mode"));
    }
    let (cam, obj_cam) = object_in_camera(world, camera);
    if !visibility_test(camera, &cam, &world.object_pose.position, &world.obstacles) {
        return Err(Error::Contract("reregister called while the object is not visible"));
    }
    if tracker.reacquire_ticks < noise.reregister_latency {
        return Ok(None);
    }
    let noisy = perturb(&obj_cam, noise.reg_sigma_pos, noise.reg_sigma_rot, rng);
    Ok(Some(PoseMeasurement::from_pose(&noisy, world.time)))
}

/// [`sense`] followed by the re-registration branch when the object is lost
/// but visible again.
pub fn perceive(
    world: &WorldState,
    camera: &CameraModel,
    tracker: &TrackerState,
    ekf: &FilterState,
    noise: &SensorNoise,
    rng: &mut impl Rng,
) -> Result<(SensorFrame, TrackerState)> {
    let (mut frame, mut next) = sense(world, camera, tracker, noise, rng);
    match next.mode {
        TrackerMode::Lost | TrackerMode::Reacquiring if frame.visible => {
            if next.mode == TrackerMode::Lost {
                next.mode = TrackerMode::Reacquiring;
                next.reacquire_ticks = 0;
                next.use_reregistration = true;
            }
            let cam = camera.world_pose(&world.gripper_pose);
            let mean_cam = cam.inverse().compose(&ekf.mean_pose());
            match reregister(world, camera, &next, &mean_cam, noise, rng)? {
                Some(m) => frame.measurement = Some(m),
                None => next.reacquire_ticks += 1,
            }
        }
        TrackerMode::Reacquiring => {
            next.mode = TrackerMode::Lost;
            next.reacquire_ticks = 0;
        }
        _ => {}
    }
    Ok((frame, next))
}

/// Filter bookkeeping for one tick. Returns the next tracker, the filter, and
/// the world-frame estimate handed to the controller.
pub fn tracking_step(
    frame: &SensorFrame,
    tracker: &TrackerState,
    ekf: &FilterState,
    camera_world: &Pose,
    dt: f64,
    params: &TrackingParams,
) -> Result<(TrackerState, FilterState, Pose)> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::Contract("tracking_step requires dt > 0"));
    }
    let mut next = tracker.clone();
    let predicted = ekf_predict(ekf, &params.noise, dt)?;

    if let Some(m) = frame.measurement {
        let world_pose = camera_world.compose(&m.pose());
        let wm = PoseMeasurement::from_pose(&world_pose, m.timestamp);
        let posterior = ekf_update(&predicted, &wm, &params.noise)?;
        if tracker.mode == TrackerMode::Reacquiring {
            next.reregistrations += 1;
        } else {
            next.use_reregistration = false;
        }
        next.mode = TrackerMode::Locked;
        next.loss_tick = None;
        next.loss_streak = 0;
        next.reacquire_ticks = 0;
        next.last_tracked_pose = m.pose();
        next.last_world_measurement = Some(wm);
        let estimate = posterior.mean_pose();
        next.last_estimate = estimate;
        return Ok((next, posterior, estimate));
    }

    if next.mode == TrackerMode::Locked {
        next.mode = TrackerMode::Lost;
        next.loss_tick = Some(frame.tick);
    }
    next.loss_streak = next.loss_streak.saturating_add(1);
    let mut filter = predicted;
    if params.ekf_enabled && params.refeed.enabled {
        if let Some(last) = &tracker.last_world_measurement {
            // the repeated observation carries no new information: it anchors
            // the pose part of the mean only, velocities and the covariance
            // keep their predicted values
            let r = params.noise.r * params.refeed.inflation(next.loss_streak);
            let anchored = ekf_update_with_r(&filter, last, &r)?.x;
            filter.x.fixed_rows_mut::<3>(POS).copy_from(&anchored.fixed_rows::<3>(POS));
            filter.x.fixed_rows_mut::<4>(QUAT).copy_from(&anchored.fixed_rows::<4>(QUAT));
        }
    }
    let estimate = if params.ekf_enabled {
        clamped_estimate(&filter, &tracker.last_estimate, dt, &params.clamp)
    } else {
        tracker.last_estimate
    };
    next.last_estimate = estimate;
    Ok((next, filter, estimate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub n_samples: usize,
    pub radius: f64,
    pub azimuths: usize,
    /// Camera elevations above the horizontal plane through the mean (rad).
    pub elevations: [f64; 2],
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            n_samples: 32,
            radius: 0.45,
            azimuths: 8,
            elevations: [50f64.to_radians(), 75f64.to_radians()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryChoice {
    pub pose: Pose,
    pub score: f64,
    pub index: usize,
    pub candidates: Vec<Pose>,
    pub scores: Vec<f64>,
    pub samples: Vec<Vector3<f64>>,
}

/// Gripper poses whose cameras sit on rings around `mean` looking at it,
/// followed by the current gripper pose.
pub fn recovery_candidates(
    mean: &Vector3<f64>,
    camera: &CameraModel,
    current_gripper: &Pose,
    cfg: &RecoveryConfig,
) -> Vec<Pose> {
    let mut out = Vec::with_capacity(cfg.azimuths * cfg.elevations.len() + 1);
    for &el in &cfg.elevations {
        for k in 0..cfg.azimuths {
            let az = 2.0 * PI * k as f64 / cfg.azimuths as f64;
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let eye = mean + dir * cfg.radius;
            if let Some(cam) = look_at(&eye, mean, &Vector3::z(), &Vector3::y()) {
                out.push(camera.gripper_for(&cam));
            }
        }
    }
    out.push(*current_gripper);
    out
}

/// Draws `n` points from N(mean, cov). The square root comes from an
/// eigendecomposition with negative eigenvalues clipped to zero.
pub fn sample_positions(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<Vector3<f64>> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let root = eig.eigenvectors
        * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    (0..n)
        .map(|_| {
            let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            mean + root * z
        })
        .collect()
}

/// Fraction of `samples` visible from the camera mounted on `gripper`.
pub fn visibility_score(
    camera: &CameraModel,
    gripper: &Pose,
    samples: &[Vector3<f64>],
    obstacles: &[Aabb],
) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let cam = camera.world_pose(gripper);
    let hits = samples
        .iter()
        .filter(|s| visibility_test(camera, &cam, s, obstacles))
        .count();
    hits as f64 / samples.len() as f64
}

/// Candidate pose maximizing the expected visible fraction of the filter's
/// position uncertainty. Ties go to the smallest displacement from the
/// current gripper, then to the lowest index.
pub fn recovery_viewpoint(
    ekf: &FilterState,
    camera: &CameraModel,
    current_gripper: &Pose,
    obstacles: &[Aabb],
    cfg: &RecoveryConfig,
    rng: &mut impl Rng,
) -> Result<RecoveryChoice> {
    let cov = ekf.position_covariance();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("position covariance"));
    }
    let mean = ekf.position();
    let samples = sample_positions(&mean, &cov, cfg.n_samples, rng);
    let candidates = recovery_candidates(&mean, camera, current_gripper, cfg);
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| visibility_score(camera, c, &samples, obstacles))
        .collect();
    let mut best = 0usize;
    for i in 1..candidates.len() {
        let d_i = (candidates[i].position - current_gripper.position).norm();
        let d_b = (candidates[best].position - current_gripper.position).norm();
        if scores[i] > scores[best] || (scores[i] == scores[best] && d_i < d_b) {
            best = i;
        }
    }
    Ok(RecoveryChoice {
        pose: candidates[best],
        score: scores[best],
        index: best,
        candidates,
        scores,
        samples,
    })
}
