//! Ground-truth simulation: workspace geometry, target motion, the
//! free-flying gripper, and collision checks.
//!
//! Frames are right-handed with z up. The EARL workspace is centered at
//! (0.50, 0.00, 0.30) m; the extended workspace adds two 15 cm slabs on
//! either side along y. Objects translate in the horizontal plane at their
//! sampled height.

use std::f64::consts::{FRAC_PI_3, PI};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Twist};

pub const GRIPPER_MAX_WIDTH: f64 = 0.085;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WorkspaceName {
    #[serde(rename = "W_EARL")]
    Earl,
    #[serde(rename = "W_A")]
    A,
    #[serde(rename = "W_B")]
    B,
    #[serde(rename = "W_KARL")]
    Karl,
}

impl WorkspaceName {
    pub fn label(&self) -> &'static str {
        match self {
            WorkspaceName::Earl => "W_EARL",
            WorkspaceName::A => "W_A",
            WorkspaceName::B => "W_B",
            WorkspaceName::Karl => "W_KARL",
        }
    }
}

/// Oriented box: center, unit axes as matrix columns, half extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vector3<f64>,
    pub axes: Matrix3<f64>,
    pub half: Vector3<f64>,
}

impl Obb {
    pub fn around_pose(pose: &Pose, center_offset: &Vector3<f64>, extent: &Vector3<f64>) -> Self {
        Self {
            center: pose.transform_point(center_offset),
            axes: pose.rotation_matrix(),
            half: extent * 0.5,
        }
    }

    pub fn from_aabb(b: &Aabb) -> Self {
        Self {
            center: b.center(),
            axes: Matrix3::identity(),
            half: (b.max - b.min) * 0.5,
        }
    }

    /// World-aligned bounds.
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center(self.center, self.axes.abs() * self.half)
    }

    fn radius(&self, axis: &Vector3<f64>) -> f64 {
        (0..3).map(|i| self.half[i] * self.axes.column(i).dot(axis).abs()).sum()
    }

    /// Smallest overlap over the separating-axis candidates, or 0 when some
    /// axis separates the boxes. Touching faces give 0, up to 1e-12 of rounding.
    pub fn penetration(&self, other: &Obb) -> f64 {
        let d = other.center - self.center;
        let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(15);
        for i in 0..3 {
            axes.push(self.axes.column(i).into_owned());
            axes.push(other.axes.column(i).into_owned());
        }
        for i in 0..3 {
            for j in 0..3 {
                let c = self.axes.column(i).cross(&other.axes.column(j));
                let n = c.norm();
                if n > 1e-9 {
                    axes.push(c / n);
                }
            }
        }
        let mut depth = f64::INFINITY;
        for a in &axes {
            let overlap = self.radius(a) + other.radius(a) - d.dot(a).abs();
            if overlap <= 1e-12 {
                return 0.0;
            }
            depth = depth.min(overlap);
        }
        depth
    }

    pub fn intersects(&self, other: &Obb) -> bool {
        self.penetration(other) > 0.0
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_center(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Self::new(center - half, center + half)
    }

    /// World-aligned bounds of a box of `extent` rigidly attached to `pose`.
    pub fn around_pose(pose: &Pose, center_offset: &Vector3<f64>, extent: &Vector3<f64>) -> Self {
        let r = pose.rotation_matrix();
        let half = r.abs() * (extent * 0.5);
        Self::from_center(pose.transform_point(center_offset), half)
    }

    /// Open-interval overlap: touching faces do not count.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    /// Smallest per-axis overlap depth, or 0 when disjoint.
    pub fn penetration(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|i| (self.max[i].min(other.max[i]) - self.min[i].max(other.min[i])).max(0.0))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    /// Whether the segment `a → b` passes through the box interior (slab test).
    pub fn segment_intersects(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        let d = b - a;
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if a[i] <= self.min[i] || a[i] >= self.max[i] {
                    return false;
                }
            } else {
                let inv = 1.0 / d[i];
                let (mut lo, mut hi) = ((self.min[i] - a[i]) * inv, (self.max[i] - a[i]) * inv);
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                t0 = t0.max(lo);
                t1 = t1.min(hi);
                if t0 >= t1 {
                    return false;
                }
            }
        }
        true
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub name: WorkspaceName,
}

impl Workspace {
    const CENTER: [f64; 3] = [0.50, 0.00, 0.30];

    fn slab(y0: f64, y1: f64, name: WorkspaceName) -> Self {
        let c = Self::CENTER;
        Self {
            min: Vector3::new(c[0] - 0.20, y0, c[2] - 0.20),
            max: Vector3::new(c[0] + 0.20, y1, c[2] + 0.20),
            name,
        }
    }

    pub fn earl() -> Self {
        Self::slab(-0.20, 0.20, WorkspaceName::Earl)
    }

    pub fn a() -> Self {
        Self::slab(-0.35, -0.20, WorkspaceName::A)
    }

    pub fn b() -> Self {
        Self::slab(0.20, 0.35, WorkspaceName::B)
    }

    pub fn karl() -> Self {
        Self::slab(-0.35, 0.35, WorkspaceName::Karl)
    }

    pub fn named(name: WorkspaceName) -> Self {
        match name {
            WorkspaceName::Earl => Self::earl(),
            WorkspaceName::A => Self::a(),
            WorkspaceName::B => Self::b(),
            WorkspaceName::Karl => Self::karl(),
        }
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.min, self.max)
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        self.aabb().contains(p, tol)
    }

    /// Thin boxes along the four vertical faces, used as walls in complex scenes.
    pub fn wall_boxes(&self, thickness: f64) -> Vec<Aabb> {
        let (lo, hi) = (self.min, self.max);
        let t = thickness;
        vec![
            Aabb::new(Vector3::new(lo.x - t, lo.y - t, lo.z), Vector3::new(lo.x, hi.y + t, hi.z)),
            Aabb::new(Vector3::new(hi.x, lo.y - t, lo.z), Vector3::new(hi.x + t, hi.y + t, hi.z)),
            Aabb::new(Vector3::new(lo.x, lo.y - t, lo.z), Vector3::new(hi.x, lo.y, hi.z)),
            Aabb::new(Vector3::new(lo.x, hi.y, lo.z), Vector3::new(hi.x, hi.y + t, hi.z)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    LinearRegular,
    LinearFast,
    Random,
    Disruptive,
}

/// Target motion parameters. `disrupt_prob` overlays a disruptive escape on
/// any kind; [`MotionKind::Disruptive`] is linear-regular motion that always escapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionPattern {
    pub kind: MotionKind,
    /// Translational speed bounds (m/s).
    pub speed_range: (f64, f64),
    /// Per-axis rotation bound for random motion (rad).
    pub rot_range: f64,
    /// Escape speed bounds (m/s).
    pub disrupt_speed: (f64, f64),
    pub disrupt_prob: f64,
    /// Window for the escape trigger time (s).
    pub disrupt_time: (f64, f64),
    /// Total escape travel bounds (m), clipped to the reachable region.
    pub escape_distance: (f64, f64),
    /// Mean-reversion time constant of random-motion velocity (s).
    pub random_tau: f64,
    /// Duration bounds of one random rotation segment (s).
    pub rot_segment: (f64, f64),
}

impl Default for MotionPattern {
    fn default() -> Self {
        Self::linear_regular()
    }
}

impl MotionPattern {
    fn base(kind: MotionKind, speed_range: (f64, f64)) -> Self {
        Self {
            kind,
            speed_range,
            rot_range: 14.5f64.to_radians(),
            disrupt_speed: (0.30, 0.36),
            disrupt_prob: 0.0,
            disrupt_time: (3.0, 5.0),
            escape_distance: (0.65, 0.80),
            random_tau: 0.5,
            rot_segment: (1.0, 2.0),
        }
    }

    pub fn linear_regular() -> Self {
        Self::base(MotionKind::LinearRegular, (0.0, 0.05))
    }

    pub fn linear_fast() -> Self {
        Self::base(MotionKind::LinearFast, (0.0, 0.15))
    }

    /// Linear motion at one fixed speed.
    pub fn linear_at(speed: f64) -> Self {
        let kind = if speed <= 0.05 {
            MotionKind::LinearRegular
        } else {
            MotionKind::LinearFast
        };
        Self::base(kind, (speed, speed))
    }

    pub fn random() -> Self {
        Self::base(MotionKind::Random, (0.0, 0.05))
    }

    pub fn disruptive() -> Self {
        Self {
            disrupt_prob: 1.0,
            ..Self::base(MotionKind::Disruptive, (0.0, 0.05))
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.speed_range;
        if !(0.0 <= lo && lo <= hi) {
            return Err(format!("invalid speed range {:?}", self.speed_range));
        }
        let cap = match self.kind {
            MotionKind::LinearRegular | MotionKind::Random | MotionKind::Disruptive => 0.05,
            MotionKind::LinearFast => 0.15,
        };
        if hi > cap + 1e-12 {
            return Err(format!("{:?} speed must be <= {cap} m/s", self.kind));
        }
        if self.disrupt_speed.0 < 0.30 || self.disrupt_speed.1 < self.disrupt_speed.0 {
            return Err("disruptive speed must be >= 0.30 m/s".into());
        }
        if !(0.0..=14.5f64.to_radians() + 1e-12).contains(&self.rot_range) {
            return Err("rotation range must lie in [0, 14.5] degrees".into());
        }
        if !(0.0..=1.0).contains(&self.disrupt_prob) {
            return Err("disrupt_prob must be a probability".into());
        }
        if self.rot_segment.0 <= 0.0 || self.rot_segment.1 < self.rot_segment.0 {
            return Err("rotation segment durations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Disruption {
    None,
    Pending {
        trigger_time: f64,
        speed: f64,
        distance: f64,
    },
    Escaping {
        direction: Vector3<f64>,
        speed: f64,
        remaining: f64,
    },
    Stopped,
}

/// Per-episode motion bookkeeping carried inside [`WorldState`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotion {
    pub base_orientation: UnitQuaternion<f64>,
    pub rot_from: Vector3<f64>,
    pub rot_to: Vector3<f64>,
    pub rot_elapsed: f64,
    pub rot_duration: f64,
    pub disruption: Disruption,
    pub triggers: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub object_pose: Pose,
    pub object_twist: Twist,
    pub object_extent: Vector3<f64>,
    pub gripper_pose: Pose,
    pub gripper_width: f64,
    /// Commanded finger state and the width at which the fingers stop on the object.
    pub gripper_closed: bool,
    pub gripper_contact: Option<f64>,
    pub obstacles: Vec<Aabb>,
    pub workspace: Workspace,
    /// Region the escape segment of a disruptive object may end in.
    pub reach: Aabb,
    pub motion: ObjectMotion,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperLimits {
    pub max_linear: f64,
    pub max_angular: f64,
    /// Finger slew rate in meters of width per second.
    pub width_rate: f64,
}

impl Default for GripperLimits {
    fn default() -> Self {
        Self {
            max_linear: 0.20,
            max_angular: 1.5,
            width_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionConfig {
    pub body_extent: Vector3<f64>,
    /// Body box center in the gripper frame; the body sits behind the palm.
    pub body_offset: Vector3<f64>,
    pub object_tolerance: f64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            body_extent: Vector3::new(0.10, 0.10, 0.12),
            body_offset: Vector3::new(0.0, 0.0, -0.06),
            object_tolerance: 0.005,
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Places the object on one of the four vertical faces of the workspace,
/// with uniform yaw in `yaw_range` and roll/pitch within ±10°.
pub fn sample_initial_object_pose(
    workspace: &Workspace,
    yaw_range: (f64, f64),
    rng: &mut impl Rng,
) -> Pose {
    let face = rng.random_range(0..4usize);
    let mut p = Vector3::new(
        rng.random_range(workspace.min.x..=workspace.max.x),
        rng.random_range(workspace.min.y..=workspace.max.y),
        rng.random_range(workspace.min.z..=workspace.max.z),
    );
    match face {
        0 => p.x = workspace.min.x,
        1 => p.x = workspace.max.x,
        2 => p.y = workspace.min.y,
        _ => p.y = workspace.max.y,
    }
    let tilt = 10f64.to_radians();
    let roll = rng.random_range(-tilt..=tilt);
    let pitch = rng.random_range(-tilt..=tilt);
    let yaw = uniform(rng, yaw_range);
    Pose::new(p, UnitQuaternion::from_euler_angles(roll, pitch, yaw))
}

/// Inward-pointing horizontal direction for an object on the workspace boundary,
/// spread ±60° around the face normal.
fn inward_direction(workspace: &Workspace, p: &Vector3<f64>, rng: &mut impl Rng) -> Vector3<f64> {
    let c = workspace.center();
    let e = workspace.extent() * 0.5;
    let rel = Vector3::new((p.x - c.x) / e.x, (p.y - c.y) / e.y, 0.0);
    let normal = if rel.x.abs() >= rel.y.abs() {
        Vector3::new(-rel.x.signum(), 0.0, 0.0)
    } else {
        Vector3::new(0.0, -rel.y.signum(), 0.0)
    };
    let spread = rng.random_range(-FRAC_PI_3..FRAC_PI_3);
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), spread) * normal
}

fn random_offsets(range: f64, rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| if range > 0.0 { rng.random_range(-range..=range) } else { 0.0 })
}

fn offset_rotation(offsets: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(offsets.x, offsets.y, offsets.z)
}

/// Builds the initial world: object at `object_pose` with its episode velocity
/// drawn from `pattern`, gripper at `gripper_pose` with open fingers.
#[allow(clippy::too_many_arguments)]
pub fn init_world(
    workspace: Workspace,
    reach: Aabb,
    object_pose: Pose,
    object_extent: Vector3<f64>,
    gripper_pose: Pose,
    obstacles: Vec<Aabb>,
    pattern: &MotionPattern,
    rng: &mut impl Rng,
) -> WorldState {
    let speed = uniform(rng, pattern.speed_range);
    let dir = inward_direction(&workspace, &object_pose.position, rng);
    let velocity = dir * speed;
    let disruption = if rng.random_bool(pattern.disrupt_prob.clamp(0.0, 1.0)) {
        Disruption::Pending {
            trigger_time: uniform(rng, pattern.disrupt_time),
            speed: uniform(rng, pattern.disrupt_speed),
            distance: uniform(rng, pattern.escape_distance),
        }
    } else {
        Disruption::None
    };
    let (rot_to, rot_duration) = if pattern.kind == MotionKind::Random {
        (
            random_offsets(pattern.rot_range, rng),
            uniform(rng, pattern.rot_segment),
        )
    } else {
        (Vector3::zeros(), 1.0)
    };
    WorldState {
        object_pose,
        object_twist: Twist {
            linear: velocity,
            angular: Vector3::zeros(),
        },
        object_extent,
        gripper_pose,
        gripper_width: GRIPPER_MAX_WIDTH,
        gripper_closed: false,
        gripper_contact: None,
        obstacles,
        workspace,
        reach,
        motion: ObjectMotion {
            base_orientation: object_pose.orientation,
            rot_from: Vector3::zeros(),
            rot_to,
            rot_elapsed: 0.0,
            rot_duration,
            disruption,
            triggers: 0,
        },
        time: 0.0,
    }
}

/// Distance along `dir` from `p` to the boundary of `region` shrunk by `margin`.
fn free_distance(region: &Aabb, p: &Vector3<f64>, dir: &Vector3<f64>, margin: f64) -> f64 {
    (0..3)
        .filter(|&i| dir[i].abs() > 1e-12)
        .map(|i| {
            let bound = if dir[i] > 0.0 {
                region.max[i] - margin
            } else {
                region.min[i] + margin
            };
            ((bound - p[i]) / dir[i]).max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Specular reflection of position and velocity at the workspace faces (x and y only).
fn reflect(ws: &Workspace, p: &mut Vector3<f64>, v: &mut Vector3<f64>) {
    for i in 0..2 {
        if p[i] < ws.min[i] {
            p[i] = 2.0 * ws.min[i] - p[i];
            v[i] = v[i].abs();
        } else if p[i] > ws.max[i] {
            p[i] = 2.0 * ws.max[i] - p[i];
            v[i] = -v[i].abs();
        }
        p[i] = p[i].clamp(ws.min[i], ws.max[i]);
    }
}

/// Advances the target object by one tick.
pub fn object_step(
    state: &WorldState,
    pattern: &MotionPattern,
    dt: f64,
    rng: &mut impl Rng,
) -> WorldState {
    let mut next = state.clone();
    next.time = state.time + dt;
    let motion = &mut next.motion;
    let mut pos = state.object_pose.position;
    let mut orientation = state.object_pose.orientation;
    let mut velocity = state.object_twist.linear;
    let mut angular = Vector3::zeros();

    if let Disruption::Pending {
        trigger_time,
        speed,
        distance,
    } = motion.disruption
    {
        if state.time + 1e-12 >= trigger_time {
            // horizontal escape heading with the most room inside the reachable region
            let offset = rng.random_range(0.0..PI / 4.0);
            let (direction, room) = (0..8)
                .map(|k| {
                    let a = offset + k as f64 * PI / 4.0;
                    let d = Vector3::new(a.cos(), a.sin(), 0.0);
                    (d, free_distance(&state.reach, &pos, &d, 0.05))
                })
                .fold((Vector3::x(), f64::NEG_INFINITY), |best, cand| {
                    if cand.1 > best.1 {
                        cand
                    } else {
                        best
                    }
                });
            motion.disruption = Disruption::Escaping {
                direction,
                speed,
                remaining: distance.min(room),
            };
            motion.triggers += 1;
        }
    }

    match motion.disruption {
        Disruption::Escaping {
            direction,
            speed,
            remaining,
        } => {
            let step = (speed * dt).min(remaining);
            pos += direction * step;
            velocity = direction * speed;
            let left = remaining - step;
            motion.disruption = if left <= 1e-12 {
                velocity = Vector3::zeros();
                Disruption::Stopped
            } else {
                Disruption::Escaping {
                    direction,
                    speed,
                    remaining: left,
                }
            };
        }
        Disruption::Stopped => {
            velocity = Vector3::zeros();
        }
        Disruption::None | Disruption::Pending { .. } => match pattern.kind {
            MotionKind::LinearRegular | MotionKind::LinearFast | MotionKind::Disruptive => {
                pos += velocity * dt;
                reflect(&state.workspace, &mut pos, &mut velocity);
            }
            MotionKind::Random => {
                let (_, max_speed) = pattern.speed_range;
                let tau = pattern.random_tau.max(dt);
                let sigma = max_speed * (2.0 / tau).sqrt() * 0.5;
                let noise = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    0.0,
                );
                velocity += -velocity * (dt / tau) + noise * (sigma * dt.sqrt());
                velocity.z = 0.0;
                let speed = velocity.norm();
                let floor = 0.1 * max_speed;
                if speed > max_speed {
                    velocity *= max_speed / speed;
                } else if speed < floor && max_speed > 0.0 {
                    // keep drifting: the object never fully halts
                    let dir = if speed > 1e-9 {
                        velocity / speed
                    } else {
                        Vector3::new(noise.x, noise.y, 0.0)
                            .try_normalize(1e-12)
                            .unwrap_or_else(Vector3::x)
                    };
                    velocity = dir * floor;
                }
                pos += velocity * dt;
                reflect(&state.workspace, &mut pos, &mut velocity);

                motion.rot_elapsed += dt;
                if motion.rot_elapsed >= motion.rot_duration {
                    motion.rot_from = motion.rot_to;
                    motion.rot_to = random_offsets(pattern.rot_range, rng);
                    motion.rot_elapsed = 0.0;
                    motion.rot_duration = uniform(rng, pattern.rot_segment);
                }
                let s = (motion.rot_elapsed / motion.rot_duration).clamp(0.0, 1.0);
                let offsets = motion.rot_from + (motion.rot_to - motion.rot_from) * s;
                let new_orientation = motion.base_orientation * offset_rotation(&offsets);
                angular = crate::geometry::rotation_error(&orientation, &new_orientation) / dt;
                orientation = new_orientation;
            }
        },
    }

    next.object_pose = Pose::new(pos, orientation);
    next.object_twist = Twist {
        linear: velocity,
        angular,
    };
    next
}

/// Gripper command: world-frame twist plus the finger action.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GripperCommand {
    pub twist: Twist,
    pub close: bool,
}

fn clamp_norm(v: &Vector3<f64>, cap: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > cap && n > 0.0 {
        v * (cap / n)
    } else {
        *v
    }
}

/// Integrates the clamped twist and slews the fingers.
pub fn gripper_step(
    state: &WorldState,
    cmd: &GripperCommand,
    dt: f64,
    limits: &GripperLimits,
) -> WorldState {
    let mut next = state.clone();
    let v = clamp_norm(&cmd.twist.linear, limits.max_linear);
    let w = clamp_norm(&cmd.twist.angular, limits.max_angular);
    next.gripper_pose = Pose::new(
        state.gripper_pose.position + v * dt,
        crate::geometry::renormalize(UnitQuaternion::from_scaled_axis(w * dt) * state.gripper_pose.orientation),
    );
    let step = limits.width_rate * dt;
    next.gripper_closed = cmd.close;
    next.gripper_width = if cmd.close {
        let floor = state.gripper_contact.unwrap_or(0.0);
        (state.gripper_width - step).max(floor)
    } else {
        (state.gripper_width + step).min(GRIPPER_MAX_WIDTH)
    };
    // keep exact values when the slew lands on a bound within rounding
    next.gripper_width = (next.gripper_width * 1e12).round() / 1e12;
    next
}

pub fn object_box(state: &WorldState) -> Obb {
    Obb::around_pose(&state.object_pose, &Vector3::zeros(), &state.object_extent)
}

pub fn gripper_box(state: &WorldState, cfg: &CollisionConfig) -> Obb {
    Obb::around_pose(&state.gripper_pose, &cfg.body_offset, &cfg.body_extent)
}

/// True when the gripper body overlaps an obstacle, or penetrates the object
/// deeper than the tolerance while no grasp is engaged.
pub fn collision_check(state: &WorldState, cfg: &CollisionConfig, grasp_engaged: bool) -> bool {
    let body = gripper_box(state, cfg);
    if state.obstacles.iter().any(|o| body.intersects(&Obb::from_aabb(o))) {
        return true;
    }
    !grasp_engaged && body.penetration(&object_box(state)) > cfg.object_tolerance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_angle;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reach() -> Aabb {
        Aabb::new(Vector3::new(0.15, -0.65, 0.05), Vector3::new(0.85, 0.65, 0.8))
    }

    fn world_with(pattern: &MotionPattern, seed: u64) -> (WorldState, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ws = Workspace::earl();
        let pose = sample_initial_object_pose(&ws, (-PI, PI), &mut rng);
        let w = init_world(
            ws,
            reach(),
            pose,
            Vector3::new(0.065, 0.065, 0.08),
            Pose::from_translation(0.5, 0.0, 1.0),
            vec![],
            pattern,
            &mut rng,
        );
        (w, rng)
    }

    #[test]
    fn workspace_geometry() {
        assert_relative_eq!(Workspace::earl().extent(), Vector3::new(0.4, 0.4, 0.4), epsilon = 1e-12);
        assert_relative_eq!(Workspace::karl().extent(), Vector3::new(0.4, 0.7, 0.4), epsilon = 1e-12);
        for ws in [Workspace::a(), Workspace::b()] {
            assert_relative_eq!(ws.extent(), Vector3::new(0.4, 0.15, 0.4), epsilon = 1e-12);
        }
        assert_eq!(Workspace::a().max.y, Workspace::earl().min.y);
        assert_eq!(Workspace::b().min.y, Workspace::earl().max.y);
        assert_eq!(Workspace::karl().min.y, Workspace::a().min.y);
        assert_eq!(Workspace::karl().max.y, Workspace::b().max.y);
        assert_relative_eq!(Workspace::earl().center(), Vector3::new(0.5, 0.0, 0.3), epsilon = 1e-12);
    }

    #[test]
    fn initial_pose_on_boundary() {
        let ws = Workspace::earl();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_initial_object_pose(&ws, (-PI, PI), &mut rng).position;
        let on_face = (0..3).any(|i| (p[i] - ws.min[i]).abs() < 1e-9 || (p[i] - ws.max[i]).abs() < 1e-9);
        assert!(on_face);
        for _ in 0..1000 {
            let pose = sample_initial_object_pose(&ws, (-PI, PI), &mut rng);
            assert!(ws.contains(&pose.position, 1e-12));
            let (roll, pitch, _) = pose.orientation.euler_angles();
            assert!(roll.abs() <= 10f64.to_radians() + 1e-9);
            assert!(pitch.abs() <= 10f64.to_radians() + 1e-9);
        }
    }

    /// Two-sample Kolmogorov–Smirnov statistic.
    fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn different_seeds_give_different_samples() {
        let ws = Workspace::earl();
        let sample = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000)
                .map(|_| sample_initial_object_pose(&ws, (-PI, PI), &mut rng).position.x)
                .collect::<Vec<_>>()
        };
        let mut a = sample(0);
        let mut b = sample(1);
        assert_ne!(a, b);
        let mut a2 = sample(0);
        assert_eq!(a, a2);
        // identical seeds never differ, so the statistic must be exactly zero there
        assert_eq!(ks_statistic(&mut a, &mut a2), 0.0);
        let d = ks_statistic(&mut a, &mut b);
        assert!(d > 0.0);
    }

    #[test]
    fn linear_step_displacement() {
        let pattern = MotionPattern::linear_at(0.05);
        let (w, mut rng) = world_with(&pattern, 3);
        let mut w = w;
        w.object_pose.position = Workspace::earl().center();
        let next = object_step(&w, &pattern, 0.05, &mut rng);
        let d = next.object_pose.position - w.object_pose.position;
        assert_relative_eq!(d.norm(), 0.0025, epsilon = 1e-12);
        assert_eq!(next.object_pose.orientation, w.object_pose.orientation);
    }

    #[test]
    fn linear_motion_stays_inside() {
        for pattern in [MotionPattern::linear_regular(), MotionPattern::linear_fast()] {
            for seed in 0..3 {
                let (mut w, mut rng) = world_with(&pattern, seed);
                for _ in 0..100_000 {
                    w = object_step(&w, &pattern, 0.05, &mut rng);
                    assert!(w.workspace.contains(&w.object_pose.position, 1e-12));
                }
            }
        }
    }

    #[test]
    fn random_motion_bounds() {
        let pattern = MotionPattern::random();
        for seed in 0..5 {
            let (mut w, mut rng) = world_with(&pattern, seed);
            for _ in 0..700 {
                let next = object_step(&w, &pattern, 0.05, &mut rng);
                let rel = w.object_pose.orientation.inverse() * next.object_pose.orientation;
                let (r, p, y) = rel.euler_angles();
                for a in [r, p, y] {
                    assert!(a.abs() <= 14.5f64.to_radians());
                }
                assert!(next.object_twist.linear.norm() <= 0.05 + 1e-12);
                assert!(next.object_twist.linear.norm() > 0.0);
                let total = geodesic_angle(&next.motion.base_orientation, &next.object_pose.orientation);
                assert!(total <= 3.0f64.sqrt() * 14.5f64.to_radians() + 1e-9);
                w = next;
            }
        }
    }

    #[test]
    fn disruptive_escape_then_stop() {
        let pattern = MotionPattern::disruptive();
        for seed in 0..20 {
            let (mut w, mut rng) = world_with(&pattern, seed);
            let mut fast = false;
            let mut speeds = Vec::new();
            for _ in 0..700 {
                w = object_step(&w, &pattern, 0.05, &mut rng);
                let s = w.object_twist.linear.norm();
                fast |= s >= 0.30;
                speeds.push(s);
            }
            assert!(fast);
            assert!(speeds[speeds.len() - 50..].iter().all(|&s| s == 0.0));
            assert_eq!(w.motion.triggers, 1);
            assert!(w.reach.contains(&w.object_pose.position, 1e-9));
        }
    }

    #[test]
    fn stepping_is_deterministic() {
        let pattern = MotionPattern::random();
        let run = || {
            let (mut w, mut rng) = world_with(&pattern, 11);
            for _ in 0..500 {
                w = object_step(&w, &pattern, 0.05, &mut rng);
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pattern_validation() {
        assert!(MotionPattern::linear_fast().validate().is_ok());
        let mut bad = MotionPattern::linear_regular();
        bad.speed_range = (0.0, 0.10);
        assert!(bad.validate().is_err());
        let mut bad = MotionPattern::disruptive();
        bad.disrupt_speed = (0.2, 0.3);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gripper_step_limits() {
        let (w, _) = world_with(&MotionPattern::linear_regular(), 0);
        let limits = GripperLimits::default();
        let still = gripper_step(&w, &GripperCommand::default(), 0.05, &limits);
        assert_eq!(still.gripper_pose, w.gripper_pose);

        let cmd = GripperCommand {
            twist: Twist {
                linear: Vector3::new(0.5, 0.0, 0.0),
                angular: Vector3::zeros(),
            },
            close: false,
        };
        let moved = gripper_step(&w, &cmd, 0.05, &limits);
        assert_relative_eq!(
            (moved.gripper_pose.position - w.gripper_pose.position).norm(),
            0.2 * 0.05,
            epsilon = 1e-12
        );

        let close = GripperCommand {
            close: true,
            ..Default::default()
        };
        let closing = gripper_step(&w, &close, 0.05, &limits);
        assert_relative_eq!(closing.gripper_width, 0.075, epsilon = 1e-12);

        let mut touching = w.clone();
        touching.gripper_width = 0.07;
        touching.gripper_contact = Some(0.065);
        let stopped = gripper_step(&touching, &close, 0.05, &limits);
        assert_relative_eq!(stopped.gripper_width, 0.065, epsilon = 1e-12);
    }

    #[test]
    fn collision_cases() {
        let cfg = CollisionConfig::default();
        let (mut w, _) = world_with(&MotionPattern::linear_regular(), 0);
        w.object_pose.position = Vector3::new(0.5, 0.0, 0.1);
        w.gripper_pose = Pose::from_translation(0.5, 0.0, 1.0);
        assert!(!collision_check(&w, &cfg, false));

        let body = gripper_box(&w, &cfg).aabb();
        w.obstacles = vec![Aabb::from_center(body.center(), Vector3::repeat(0.2))];
        assert!(collision_check(&w, &cfg, false));

        // obstacle whose +x face coincides with the body's -x face
        let touching = Aabb::new(
            Vector3::new(body.min.x - 0.1, body.min.y, body.min.z),
            Vector3::new(body.min.x, body.max.y, body.max.z),
        );
        w.obstacles = vec![touching];
        assert!(!collision_check(&w, &cfg, false));
    }

    #[test]
    fn oriented_boxes_do_not_inflate() {
        let yaw = UnitQuaternion::from_euler_angles(0.0, 0.0, PI / 4.0);
        let a = Obb::around_pose(&Pose::new(Vector3::zeros(), yaw), &Vector3::zeros(), &Vector3::repeat(0.1));
        // the world-aligned hulls overlap, the boxes are 0.01 apart along the diagonal
        let gap = 0.05 + 0.05 + 0.01;
        let b = Obb::around_pose(
            &Pose::new(Vector3::new(1.0, 1.0, 0.0) * (gap * 0.5f64.sqrt()), yaw),
            &Vector3::zeros(),
            &Vector3::repeat(0.1),
        );
        assert!(a.aabb().intersects(&b.aabb()));
        assert!(!a.intersects(&b));
        assert_eq!(a.penetration(&b), b.penetration(&a));
        let c = Obb::around_pose(&Pose::new(Vector3::new(0.06, 0.0, 0.0), yaw), &Vector3::zeros(), &Vector3::repeat(0.1));
        assert!(a.penetration(&c) > 0.0);
    }

    #[test]
    fn object_penetration_depends_on_grasp_state() {
        let cfg = CollisionConfig::default();
        let (mut w, _) = world_with(&MotionPattern::linear_regular(), 0);
        w.object_pose = Pose::from_translation(0.5, 0.0, 0.3);
        w.gripper_pose = Pose::from_translation(0.5, 0.0, 0.3 + 0.06);
        assert!(collision_check(&w, &cfg, false));
        assert!(!collision_check(&w, &cfg, true));
    }

    #[test]
    fn segment_box_intersection() {
        let b = Aabb::new(Vector3::new(-1.0, -1.0, -1.0), Vector3::new(1.0, 1.0, 1.0));
        assert!(b.segment_intersects(&Vector3::new(-2.0, 0.0, 0.0), &Vector3::new(2.0, 0.0, 0.0)));
        assert!(!b.segment_intersects(&Vector3::new(-2.0, 2.0, 0.0), &Vector3::new(2.0, 2.0, 0.0)));
        assert!(!b.segment_intersects(&Vector3::new(-3.0, 0.0, 0.0), &Vector3::new(-2.0, 0.0, 0.0)));
    }
}
