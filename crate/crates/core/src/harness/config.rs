use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::control::ControlGains;
use crate::ekf::{ClampConfig, NoiseParams, RefeedConfig};
use crate::geometry::{frame_from_xz, Pose};
use crate::grasp::{GraspTolerances, SelectionWeights};
use crate::perception::{CameraModel, RecoveryConfig, SensorNoise};
use crate::reward::CurriculumConfig;
use crate::world::{Aabb, CollisionConfig, GripperLimits, MotionPattern};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingFailureConfig {
    /// Estimate-to-truth distance counted as lost (m).
    pub distance: f64,
    /// How long the distance must persist (s).
    pub duration: f64,
}

impl Default for TrackingFailureConfig {
    fn default() -> Self {
        Self {
            distance: 0.25,
            duration: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub object_extent: Vector3<f64>,
    pub gripper_home: Vector3<f64>,
    /// Yaw range of the initial object pose (rad).
    pub yaw_range: (f64, f64),
    pub reach: Aabb,
    /// Lateral offset of the corridor walls in complex scenes (m).
    pub wall_offset: f64,
    pub wall_thickness: f64,
    pub wall_length: f64,
    pub wall_height: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            object_extent: Vector3::new(0.065, 0.065, 0.08),
            gripper_home: Vector3::new(0.5, 0.0, 1.0),
            yaw_range: (-std::f64::consts::PI, std::f64::consts::PI),
            reach: Aabb::new(Vector3::new(0.15, -0.65, 0.05), Vector3::new(0.85, 0.65, 0.8)),
            wall_offset: 0.25,
            wall_thickness: 0.02,
            wall_length: 0.6,
            wall_height: 0.25,
        }
    }
}

impl SceneConfig {
    /// Gripper pose at episode start: palm pointing down, fingers closing along world y.
    pub fn home_pose(&self) -> Pose {
        let q = frame_from_xz(&Vector3::y(), &-Vector3::z()).expect("orthogonal axes");
        Pose::new(self.gripper_home, q)
    }
}

/// Every tunable default of the simulation, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Diagonal of the initial filter covariance.
    pub p0: f64,
    pub ekf: NoiseParams,
    pub clamp: ClampConfig,
    pub refeed: RefeedConfig,
    pub camera: CameraModel,
    pub sensor: SensorNoise,
    pub recovery: RecoveryConfig,
    pub gripper: GripperLimits,
    pub collision: CollisionConfig,
    pub grasp: GraspTolerances,
    pub selection: SelectionWeights,
    pub control: ControlGains,
    pub curriculum: CurriculumConfig,
    pub tracking_failure: TrackingFailureConfig,
    pub scene: SceneConfig,
    /// Escape, rotation and random-walk parameters copied into every preset pattern.
    pub motion: MotionPattern,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            t_max: 35.0,
            p0: 1e-4,
            ekf: NoiseParams::default(),
            clamp: ClampConfig::default(),
            refeed: RefeedConfig::default(),
            camera: CameraModel::default(),
            sensor: SensorNoise::default(),
            recovery: RecoveryConfig::default(),
            gripper: GripperLimits::default(),
            collision: CollisionConfig::default(),
            grasp: GraspTolerances::default(),
            selection: SelectionWeights::default(),
            control: ControlGains::default(),
            curriculum: CurriculumConfig::default(),
            tracking_failure: TrackingFailureConfig::default(),
            scene: SceneConfig::default(),
            motion: MotionPattern::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn ticks(&self) -> u64 {
        (self.t_max / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if self.t_max.is_nan() || self.t_max <= 0.0 {
            return bad("t_max must be positive");
        }
        let ratio = self.t_max / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return bad("t_max must be an integer multiple of dt");
        }
        if self.p0.is_nan() || self.p0 <= 0.0 {
            return bad("p0 must be positive");
        }
        if (self.control.dt - self.dt).abs() > 1e-12 {
            return bad("control.dt must equal dt");
        }
        if self.grasp.pool_size == 0 {
            return bad("grasp.pool_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.grasp.slip_prob) {
            return bad("grasp.slip_prob must be a probability");
        }
        if self.refeed.rho < 1.0 {
            return bad("refeed.rho must be >= 1");
        }
        if self.recovery.n_samples == 0 || self.recovery.azimuths == 0 {
            return bad("recovery sampling counts must be positive");
        }
        self.camera.validate()?;
        self.curriculum.weights.validate()?;
        self.motion.validate().map_err(Error::InvalidConfig)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.ticks(), 700);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = SimConfig::from_toml_str("t_max = 20.0\n[grasp]\nslip_prob = 0.5\n").unwrap();
        assert_eq!(cfg.t_max, 20.0);
        assert_eq!(cfg.grasp.slip_prob, 0.5);
        assert_eq!(cfg.grasp.max_retries, 3);
        assert_eq!(cfg.dt, 0.05);
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = SimConfig {
            t_max: 35.01,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig::from_toml_str("[camera]\nhfov = 4.0\n").unwrap();
        assert!(cfg.validate().is_err());
        assert!(SimConfig::from_toml_str("dt = \"fast\"").is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = SimConfig::load(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.toml"));
    }
}
