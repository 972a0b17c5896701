//! Pipeline configuration: a TOML document checked in next to an
//! experiment; command-line flags override individual fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use drivevla::captioning::CaptionThresholds;
use drivevla::estimation::NoiseConfig;
use drivevla::eval::SplitSpec;
use drivevla::sampler::{BinningConfig, DEFAULT_DELTA};
use drivevla::trajfilter::FilterThresholds;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Directory of recording subdirectories.
    pub recordings: PathBuf,
    /// Directory all stage artifacts are written under.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { recordings: PathBuf::from("corpus"), output: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Additive smoothing constant for inverse-frequency weights.
    pub delta: f64,
    /// Scenes to draw; absent keeps every eligible non-overlapping scene.
    pub n_scenes: Option<usize>,
    pub seed: u64,
    pub bins: BinningConfig,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { delta: DEFAULT_DELTA, n_scenes: None, seed: 0, bins: BinningConfig::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionConfig {
    pub thresholds: CaptionThresholds,
    /// HTTP endpoint of the vision-language model, if any.
    pub vlm_endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub noise: NoiseConfig,
    pub filter: FilterThresholds,
    pub sampling: SamplingConfig,
    pub captioning: CaptionConfig,
    pub split: SplitSpec,
}

impl PipelineConfig {
    /// Load from `path` when given, else from `drivevla.toml` when present,
    /// else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let (path, required) = match path {
            Some(p) => (p.to_path_buf(), true),
            None => (PathBuf::from("drivevla.toml"), false),
        };
        if !path.exists() {
            if required {
                return Err(format!("config file {} does not exist", path.display()));
            }
            return Ok(PipelineConfig::default());
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))?;
        cfg.sampling.bins.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}
