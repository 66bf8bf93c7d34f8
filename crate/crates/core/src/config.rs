//! Pipeline configuration: one TOML file with every module's knobs.
//! Unknown keys are rejected; CLI `--set key.path=value` overrides are
//! merged before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{AssociationConfig, ConstVelNoise, ImuNoise, UpdateConfig};
use crate::map::VoxelMapConfig;
use crate::merge::MergeConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override '{0}': expected key.path=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    LidarInertial,
    LidarOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Scan container (binary) or xyz text file.
    pub scans: Option<PathBuf>,
    /// IMU sample file; required in lidar_inertial mode.
    pub imu: Option<PathBuf>,
    /// Output directory for trajectory, diagnostics and map stats.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Range noise std, meters.
    pub sigma_range: f64,
    /// Bearing noise std, radians.
    pub sigma_bearing: f64,
    /// Use these values even when the scan file carries its own noise spec.
    pub override_noise: bool,
    /// Returns beyond this range are dropped, meters.
    pub max_range: f64,
    /// Returns closer than this are dropped, meters.
    pub min_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            sigma_range: 0.02,
            sigma_bearing: 0.05_f64.to_radians(),
            override_noise: false,
            max_range: 120.0,
            min_range: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Stationary window used to initialize gravity and gyro bias.
    pub gravity_align_secs: f64,
    /// Input scans are assumed motion-compensated; there is no in-pipeline
    /// deskew. Set for documentation purposes on real data.
    pub assume_deskewed: bool,
    /// Initial error-state standard deviations. The world frame is pinned
    /// to the start pose, and the stationary window pins gravity and the
    /// gyro bias, so these default small.
    pub sigma_rot: f64,
    pub sigma_trans: f64,
    pub sigma_vel: f64,
    pub sigma_bias_gyro: f64,
    pub sigma_bias_acc: f64,
    pub sigma_gravity: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            gravity_align_secs: 1.0,
            assume_deskewed: true,
            sigma_rot: 1e-3,
            sigma_trans: 1e-3,
            sigma_vel: 1e-2,
            sigma_bias_gyro: 1e-3,
            sigma_bias_acc: 2e-3,
            sigma_gravity: 2e-3,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("sigma_rot", self.sigma_rot),
            ("sigma_trans", self.sigma_trans),
            ("sigma_vel", self.sigma_vel),
            ("sigma_bias_gyro", self.sigma_bias_gyro),
            ("sigma_bias_acc", self.sigma_bias_acc),
            ("sigma_gravity", self.sigma_gravity),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(format!("init.{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Master switch for the plane merging pass.
    pub merging: bool,
    pub seed: u64,
    pub paths: PathsConfig,
    pub map: VoxelMapConfig,
    pub merge: MergeConfig,
    pub sensor: SensorConfig,
    pub imu_noise: ImuNoise,
    pub cv_noise: ConstVelNoise,
    pub update: UpdateConfig,
    pub association: AssociationConfig,
    pub init: InitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::LidarInertial,
            merging: true,
            seed: 0,
            paths: PathsConfig::default(),
            map: VoxelMapConfig::default(),
            merge: MergeConfig::default(),
            sensor: SensorConfig::default(),
            imu_noise: ImuNoise::default(),
            cv_noise: ConstVelNoise::default(),
            update: UpdateConfig::default(),
            association: AssociationConfig::default(),
            init: InitConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Load with `key.path=value` overrides merged into the parsed TOML
    /// before deserialization, so typos in override keys are rejected the
    /// same way unknown file keys are.
    pub fn from_file_with_overrides(
        path: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let base = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        let mut value: toml::Value =
            toml::from_str(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let cfg: PipelineConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.map.validate().map_err(ConfigError::Invalid)?;
        self.merge.validate().map_err(ConfigError::Invalid)?;
        if self.sensor.sigma_range < 0.0 || self.sensor.sigma_bearing < 0.0 {
            return Err(ConfigError::Invalid("sensor noise stds must be >= 0".into()));
        }
        if self.sensor.max_range.is_nan() || self.sensor.max_range <= self.sensor.min_range {
            return Err(ConfigError::Invalid("sensor.max_range must exceed min_range".into()));
        }
        if self.update.max_iters == 0 {
            return Err(ConfigError::Invalid("update.max_iters must be >= 1".into()));
        }
        if self.association.gate_sigma.is_nan() || self.association.gate_sigma <= 0.0 {
            return Err(ConfigError::Invalid("association.gate_sigma must be > 0".into()));
        }
        if self.init.gravity_align_secs < 0.0 {
            return Err(ConfigError::Invalid("init.gravity_align_secs must be >= 0".into()));
        }
        self.init.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// Resolved config as TOML, for `--dump-effective-config`.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn apply_override(root: &mut toml::Value, item: &str) -> Result<(), ConfigError> {
    let (key, raw) = item.split_once('=').ok_or_else(|| ConfigError::BadOverride(item.into()))?;
    let parsed: toml::Value = match raw.parse::<i64>() {
        Ok(v) => toml::Value::Integer(v),
        Err(_) => match raw.parse::<f64>() {
            Ok(v) => toml::Value::Float(v),
            Err(_) => match raw {
                "true" => toml::Value::Boolean(true),
                "false" => toml::Value::Boolean(false),
                s => toml::Value::String(s.to_string()),
            },
        },
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(ConfigError::BadOverride(item.into()));
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride(format!("{key} crosses a non-table")))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}
