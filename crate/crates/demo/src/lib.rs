//! Browser bindings for three small views of the simulator: a recorded
//! episode, EKF extrapolation against holding the last pose through an
//! occlusion, and the recovery-viewpoint scores for one covariance.
//!
//! The plain functions return serializable views and are what the native
//! tests exercise. The `*_json` exports wrap them for JavaScript.

use dyngrasp_core::ekf::{ekf_init, PoseMeasurement, StateVector};
use dyngrasp_core::geometry::{frame_from_xz, Pose};
use dyngrasp_core::harness::episode::TraceRecord;
use dyngrasp_core::harness::scenario::EpisodeSpec;
use dyngrasp_core::harness::{run_plan, Outcome, ScenarioOptions, SimConfig};
use dyngrasp_core::perception::{
    recovery_viewpoint, tracking_step, SensorFrame, TrackerMode, TrackerState, TrackingParams,
};
use dyngrasp_core::world::{Aabb, MotionPattern, Workspace, WorkspaceName};
use dyngrasp_core::{Error, Result};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeView {
    pub outcome: Outcome,
    pub time_to_grasp: Option<f64>,
    pub retries: u32,
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub frames: Vec<Frame>,
}

/// One tick, positions flattened for plotting.
#[derive(Debug, Clone, Serialize)]
pub struct Frame {
    pub t: f64,
    pub object: [f64; 3],
    pub estimate: [f64; 3],
    pub gripper: [f64; 3],
    pub locked: bool,
    pub phase: String,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn pattern_named(name: &str) -> Result<MotionPattern> {
    match name {
        "linear" => Ok(MotionPattern::linear_regular()),
        "fast" => Ok(MotionPattern::linear_fast()),
        "random" => Ok(MotionPattern::random()),
        "disruptive" => Ok(MotionPattern::disruptive()),
        other => Err(Error::InvalidConfig(format!("unknown motion pattern {other:?}"))),
    }
}

/// Runs one seeded episode in the default workspace and keeps its trace.
pub fn episode(seed: u64, pattern: &str, ekf: bool) -> Result<EpisodeView> {
    let spec = EpisodeSpec {
        group: "demo".into(),
        workspace: WorkspaceName::Earl,
        pattern: pattern_named(pattern)?,
    };
    let opts = ScenarioOptions {
        ekf_enabled: ekf,
        record_trace: true,
        ..Default::default()
    };
    let r = run_plan(&[spec], seed, &opts)?.remove(0);
    let ws = Workspace::earl();
    let frames = r
        .trace
        .unwrap_or_default()
        .iter()
        .map(|t: &TraceRecord| Frame {
            t: t.t,
            object: arr(&t.object),
            estimate: arr(&t.estimate),
            gripper: arr(&t.gripper),
            locked: t.mode == TrackerMode::Locked,
            phase: t.phase.clone(),
        })
        .collect();
    Ok(EpisodeView {
        outcome: r.outcome,
        time_to_grasp: r.time_to_grasp,
        retries: r.retries,
        workspace_min: arr(&ws.min),
        workspace_max: arr(&ws.max),
        frames,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OcclusionView {
    pub dt: f64,
    /// Tick at which measurements stop.
    pub loss_start: usize,
    pub truth: Vec<[f64; 3]>,
    pub filtered: Vec<[f64; 3]>,
    pub held: Vec<[f64; 3]>,
    pub filtered_error: f64,
    pub held_error: f64,
}

/// A target moving in a straight line at `speed` m/s is tracked for 3 s
/// with 5 mm measurement noise, then hidden for `loss` seconds. Both the
/// filter and the hold-last-pose baseline run through the same tracker.
pub fn occlusion(speed: f64, heading_deg: f64, loss: f64, seed: u64) -> Result<OcclusionView> {
    if !(speed.is_finite() && speed >= 0.0 && loss.is_finite() && loss > 0.0 && loss <= 10.0) {
        return Err(Error::InvalidConfig("speed must be >= 0 and loss in (0, 10] s".into()));
    }
    let sim = SimConfig::default();
    let dt = sim.dt;
    let h = heading_deg.to_radians();
    let v = Vector3::new(h.cos(), h.sin(), 0.0) * speed;
    let start = Vector3::new(0.5, 0.0, 0.2);
    let seen = (3.0 / dt).round() as usize;
    let total = seen + (loss / dt).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<Vector3<f64>> = (0..seen)
        .map(|_| Vector3::from_fn(|_, _| 0.005 * Distribution::<f64>::sample(&StandardNormal, &mut rng)))
        .collect();

    let run = |ekf_enabled: bool| -> Result<Vec<[f64; 3]>> {
        let params = TrackingParams {
            noise: sim.ekf.to_config(),
            clamp: sim.clamp,
            refeed: sim.refeed,
            ekf_enabled,
        };
        let first = Pose::new(start, UnitQuaternion::identity());
        let mut f = ekf_init(&first, &StateVector::repeat(sim.p0), 0.0)?;
        let mut tracker = TrackerState::locked(Pose::identity(), first);
        let mut out = Vec::with_capacity(total);
        for tick in 0..total {
            let truth = start + v * ((tick + 1) as f64 * dt);
            let measurement = noise.get(tick).map(|n| {
                PoseMeasurement::from_pose(&Pose::new(truth + n, UnitQuaternion::identity()), (tick + 1) as f64 * dt)
            });
            let frame = SensorFrame {
                visible: measurement.is_some(),
                measurement,
                tick: tick as u64,
            };
            let (tr, nf, _) = tracking_step(&frame, &tracker, &f, &Pose::identity(), dt, &params)?;
            tracker = tr;
            f = nf;
            out.push(arr(&if ekf_enabled { f.position() } else { tracker.last_estimate.position }));
        }
        Ok(out)
    };
    let filtered = run(true)?;
    let held = run(false)?;
    let truth: Vec<[f64; 3]> = (0..total).map(|k| arr(&(start + v * ((k + 1) as f64 * dt)))).collect();
    let err = |p: &[f64; 3]| (Vector3::from(*p) - Vector3::from(truth[total - 1])).norm();
    Ok(OcclusionView {
        dt,
        loss_start: seen,
        filtered_error: err(&filtered[total - 1]),
        held_error: err(&held[total - 1]),
        truth,
        filtered,
        held,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryView {
    pub mean: [f64; 3],
    pub samples: Vec<[f64; 3]>,
    /// Camera positions of the candidates, current view last.
    pub cameras: Vec<[f64; 3]>,
    pub scores: Vec<f64>,
    pub best: usize,
    pub obstacle: Option<[[f64; 3]; 2]>,
}

/// Scores every recovery viewpoint for an axis-aligned position covariance
/// with standard deviations `sigma` (m), optionally with a box hanging
/// above the estimate.
pub fn recovery(sigma: [f64; 3], obstacle: bool, seed: u64) -> Result<RecoveryView> {
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0 && *s <= 0.5)) {
        return Err(Error::InvalidConfig("each sigma must be in (0, 0.5] m".into()));
    }
    let sim = SimConfig::default();
    let mean = Vector3::new(0.5, 0.0, 0.15);
    let mut f = ekf_init(&Pose::new(mean, UnitQuaternion::identity()), &StateVector::repeat(sim.p0), 0.0)?;
    let cov = Matrix3::from_diagonal(&Vector3::from(sigma).component_mul(&Vector3::from(sigma)));
    f.p.fixed_view_mut::<3, 3>(0, 0).copy_from(&cov);
    let down = frame_from_xz(&Vector3::y(), &-Vector3::z()).expect("orthogonal axes");
    let current = Pose::new(Vector3::new(0.35, 0.25, 0.75), down);
    let boxes: Vec<Aabb> = if obstacle {
        let c = mean + Vector3::new(0.0, 0.0, 0.22);
        vec![Aabb::new(c - Vector3::new(0.12, 0.12, 0.02), c + Vector3::new(0.12, 0.12, 0.02))]
    } else {
        vec![]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choice = recovery_viewpoint(&f, &sim.camera, &current, &boxes, &sim.recovery, &mut rng)?;
    Ok(RecoveryView {
        mean: arr(&mean),
        samples: choice.samples.iter().map(arr).collect(),
        cameras: choice
            .candidates
            .iter()
            .map(|c| arr(&sim.camera.world_pose(c).position))
            .collect(),
        scores: choice.scores,
        best: choice.index,
        obstacle: boxes.first().map(|b| [arr(&b.min), arr(&b.max)]),
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn episode_json(seed: u32, pattern: &str, ekf: bool) -> std::result::Result<String, JsError> {
    to_js(episode(seed as u64, pattern, ekf))
}

#[wasm_bindgen]
pub fn occlusion_json(speed: f64, heading_deg: f64, loss: f64, seed: u32) -> std::result::Result<String, JsError> {
    to_js(occlusion(speed, heading_deg, loss, seed as u64))
}

#[wasm_bindgen]
pub fn recovery_json(sx: f64, sy: f64, sz: f64, obstacle: bool, seed: u32) -> std::result::Result<String, JsError> {
    to_js(recovery([sx, sy, sz], obstacle, seed as u64))
}
