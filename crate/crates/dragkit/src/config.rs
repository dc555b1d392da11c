//! TOML engine configuration. Every section is optional; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use dragkit_core::diffusion::{NoiseSchedule, ToyDenoiser};
use dragkit_core::engine::{Backend, DragConfig};
use dragkit_core::readout::HeadTraining;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Environment variable consulted when no `--config` flag is given.
pub const CONFIG_ENV: &str = "DRAGKIT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { total_steps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub smoothing_sigma: f64,
    pub pyramid_sigmas: Vec<f64>,
    /// Image pixels per latent cell along each axis.
    pub latent_factor: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            smoothing_sigma: 0.5,
            pyramid_sigmas: vec![0.5, 1.0, 2.0],
            latent_factor: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    /// Head parameter file; when absent a head is trained per seed.
    pub head_path: Option<PathBuf>,
    pub training: HeadTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub drag: DragConfig,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub readout: ReadoutConfig,
    pub output_dir: PathBuf,
    pub debug: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            drag: DragConfig::default(),
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
            readout: ReadoutConfig::default(),
            output_dir: PathBuf::from("out"),
            debug: false,
        }
    }
}

impl EngineConfig {
    /// Parses and validates; `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let config: EngineConfig = toml::from_str(text).map_err(|e| AppError::Config {
            path: origin.to_string(),
            message: e.message().to_string(),
        })?;
        config.validate().map_err(|message| AppError::Config {
            path: origin.to_string(),
            message,
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        if let (Some(head), Some(dir)) = (&config.readout.head_path, path.parent()) {
            if head.is_relative() {
                config.readout.head_path = Some(dir.join(head));
            }
        }
        Ok(config)
    }

    /// Loads `explicit`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        if let Some(path) = explicit {
            return Self::load(path);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(path) if !path.is_empty() => Self::load(Path::new(&path)),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.drag.validate().map_err(|e| e.to_string())?;
        let backend = self.backend().map_err(|e| e.to_string())?;
        let t = backend
            .schedule
            .timestep_at_fraction(self.drag.timestep_fraction);
        if self.drag.aldd_denoise_steps > t {
            return Err(format!(
                "drag.aldd_denoise_steps = {} exceeds the drag timestep {t}",
                self.drag.aldd_denoise_steps
            ));
        }
        let tr = &self.readout.training;
        if tr.triplets == 0 || tr.width == 0 || tr.time_dim == 0 || !tr.time_dim.is_multiple_of(2) {
            return Err(
                "readout.training needs triplets > 0, width > 0 and an even time_dim > 0".into(),
            );
        }
        if !(tr.learning_rate > 0.0 && tr.learning_rate.is_finite()) {
            return Err("readout.training.learning_rate must be positive".into());
        }
        if !(tr.margin > 0.0 && tr.margin.is_finite()) {
            return Err("readout.training.margin must be positive".into());
        }
        if !(tr.gain > 0.0 && tr.gain.is_finite()) {
            return Err("readout.training.gain must be positive".into());
        }
        Ok(())
    }

    pub fn backend(&self) -> dragkit_core::Result<Backend> {
        if self.denoiser.latent_factor == 0 {
            return Err(dragkit_core::Error::Configuration(
                "denoiser.latent_factor must be positive".into(),
            ));
        }
        Ok(Backend {
            denoiser: ToyDenoiser::new(
                self.denoiser.smoothing_sigma,
                self.denoiser.pyramid_sigmas.clone(),
            )?,
            schedule: NoiseSchedule::cosine(self.schedule.total_steps)?,
            latent_factor: self.denoiser.latent_factor,
        })
    }
}
