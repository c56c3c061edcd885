//! Run configuration: one TOML file drives every subcommand. CLI flags
//! override file values; the effective config is snapshotted into the run
//! manifest for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxseg::SegConfig;
use crate::detect::DetectorConfig;
use crate::report::EvalOptions;
use crate::synthgen::GeneratorConfig;
use crate::types::ProcessStep;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Output and input locations, all under one run directory by default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    pub predictions_file: PathBuf,
    pub report_dir: PathBuf,
}

impl Paths {
    pub fn under(root: &Path) -> Self {
        Paths {
            dataset_dir: root.join("dataset"),
            predictions_file: root.join("predictions.json"),
            report_dir: root.join("report"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub step: ProcessStep,
    pub seed: u64,
    pub paths: Paths,
    /// Defaults to the step preset with this config's seed.
    pub generator: Option<GeneratorConfig>,
    /// Defaults to the step preset.
    pub detector: Option<DetectorConfig>,
    /// Defaults to the step preset.
    pub segmentation: Option<SegConfig>,
    #[serde(default)]
    pub metrics: EvalOptions,
    /// Worker threads; None uses all available cores.
    pub parallelism: Option<usize>,
    /// Debug overlay PNGs (boxes + mask outlines); off by default.
    #[serde(default)]
    pub overlays: bool,
}

impl RunConfig {
    /// Preset config for a step, everything under `root`.
    pub fn preset(step: ProcessStep, seed: u64, root: &Path) -> Self {
        RunConfig {
            step,
            seed,
            paths: Paths::under(root),
            generator: None,
            detector: None,
            segmentation: None,
            metrics: EvalOptions::default(),
            parallelism: None,
            overlays: false,
        }
    }

    /// The generator spec in effect (explicit or step preset).
    pub fn generator(&self) -> GeneratorConfig {
        self.generator.clone().unwrap_or_else(|| match self.step {
            ProcessStep::Adi => GeneratorConfig::adi_default(self.seed),
            ProcessStep::Aei => GeneratorConfig::aei_default(self.seed),
        })
    }

    /// The detector config in effect (explicit or step preset).
    pub fn detector(&self) -> DetectorConfig {
        self.detector.clone().unwrap_or_else(|| DetectorConfig::for_step(self.step))
    }

    /// The segmentation config in effect (explicit or step preset).
    pub fn segmentation(&self) -> SegConfig {
        self.segmentation.clone().unwrap_or_else(|| SegConfig::for_step(self.step))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let generator = self.generator();
        if generator.step != self.step {
            return Err(ConfigError::Invalid(format!(
                "generator step {} does not match run step {}",
                generator.step, self.step
            )));
        }
        generator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.detector().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.metrics.iou_set.is_empty()
            || self.metrics.iou_set.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(ConfigError::Invalid("metrics.iou_set must be thresholds in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.metrics.confidence_floor) {
            return Err(ConfigError::Invalid("metrics.confidence_floor outside [0, 1]".into()));
        }
        if self.parallelism == Some(0) {
            return Err(ConfigError::Invalid("parallelism must be >= 1".into()));
        }
        Ok(())
    }
}

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "ADCDS_CONFIG";

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|source| ConfigError::Parse { path: path.display().to_string(), source: Box::new(source) })?;
    config.validate()?;
    Ok(config)
}

pub fn save_run_config(config: &RunConfig, path: impl AsRef<Path>) -> Result<(), ConfigError> {
    let path = path.as_ref();
    let text = toml::to_string_pretty(config).expect("config serializes");
    std::fs::write(path, text)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}
