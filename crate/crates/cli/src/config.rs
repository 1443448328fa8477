//! Run configurations. Each command reads one of these from `--config`
//! (all fields optional), applies flag overrides and writes the resolved
//! value to `resolved_config.json` in its output directory. Feeding that file
//! back through `--config` repeats the run.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hggdp::kspace::{MaskKind, MaskParams};
use hggdp::phantom::PhantomSpec;
use hggdp::recon::{InitKind, ReconConfig};
use hggdp::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub phantom: PhantomSpec,
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self { phantom: PhantomSpec::default(), train_count: 200, test_count: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub kind: MaskKind,
    pub height: usize,
    pub width: usize,
    pub acceleration: f64,
    pub seed: u64,
    pub params: MaskParams,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            kind: MaskKind::PseudoRadial,
            height: 128,
            width: 128,
            acceleration: 4.0,
            seed: 0,
            params: MaskParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub manifest: Option<PathBuf>,
    /// Patches cut from the training images before training starts.
    pub patch_count: usize,
    pub flips: bool,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self { manifest: None, patch_count: 8000, flips: true, train: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconRunConfig {
    pub checkpoint: Option<PathBuf>,
    /// Undersampled k-space; alternatively `image` is undersampled with `mask`.
    pub kspace: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Complex Gaussian noise added when simulating `y` from `image`.
    pub noise_std: f64,
    pub recon: ReconConfig,
}

impl Default for ReconRunConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            kspace: None,
            image: None,
            mask: None,
            ground_truth: None,
            noise_std: 0.0,
            recon: ReconConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AblationDimension {
    #[serde(rename = "I")]
    #[value(name = "I")]
    Levels,
    #[serde(rename = "N")]
    #[value(name = "N")]
    Replicas,
    #[serde(rename = "T")]
    #[value(name = "T")]
    Steps,
    Patch,
    Init,
}

impl AblationDimension {
    pub fn needs_checkpoint_per_value(self) -> bool {
        matches!(self, Self::Levels | Self::Replicas | Self::Patch)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Levels => "I",
            Self::Replicas => "N",
            Self::Steps => "T",
            Self::Patch => "patch",
            Self::Init => "init",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub dimension: AblationDimension,
    pub grid: Vec<String>,
    pub manifest: Option<PathBuf>,
    /// Checkpoint for dimensions that reuse one model (T, init).
    pub checkpoint: Option<PathBuf>,
    /// Directory holding `<dimension>_<value>.ckpt` for I, N and patch.
    pub checkpoint_dir: Option<PathBuf>,
    pub mask: MaskConfig,
    /// Held-out images used (first `images` test entries).
    pub images: usize,
    pub recon: ReconConfig,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            dimension: AblationDimension::Steps,
            grid: vec!["20".into(), "60".into(), "100".into()],
            manifest: None,
            checkpoint: None,
            checkpoint_dir: None,
            mask: MaskConfig::default(),
            images: 10,
            recon: ReconConfig::default(),
        }
    }
}

impl AblateConfig {
    /// Applies one grid value to the reconstruction config.
    pub fn recon_for(&self, value: &str) -> Result<ReconConfig> {
        let mut r = self.recon.clone();
        let bad = || ConfigError(format!("grid value `{value}` is not valid for dimension {}", self.dimension.label()));
        match self.dimension {
            AblationDimension::Steps => r.steps_per_level = value.parse().map_err(|_| bad())?,
            AblationDimension::Init => r.init = value.parse::<InitKind>().map_err(|_| bad())?,
            AblationDimension::Replicas => r.replicas = value.parse().map_err(|_| bad())?,
            AblationDimension::Levels => r.schedule.count = value.parse().map_err(|_| bad())?,
            AblationDimension::Patch => {
                value.parse::<usize>().map_err(|_| bad())?;
            }
        }
        Ok(r)
    }
}

/// Reads a JSON config, or the default when `path` is `None`.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| ConfigError(format!("malformed config {}: {e}", p.display())).into())
        }
    }
}

pub fn write_resolved<T: Serialize>(out: &Path, value: &T) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let p = out.join("resolved_config.json");
    std::fs::write(&p, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    Ok(())
}
