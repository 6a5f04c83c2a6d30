//! The single JSON configuration file. Every section and field is optional;
//! omitted values take their defaults and command-line flags override both.

use std::path::Path;

use serde::{Deserialize, Serialize};
use uvnet_core::{GaussianSpec, PostprocessConfig, StainParams, UVNetConfig};

use crate::error::{PipelineError, Result};
use crate::fsutil;
use crate::split::SplitSpec;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

/// Environment variable that, when set, replaces every `--out` directory.
pub const OUTPUT_DIR_ENV: &str = "UVNET_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: UVNetConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub gaussian: GaussianSpec,
    pub postprocess: PostprocessConfig,
    pub stain: StainParams,
    pub synth: SynthConfig,
    /// Centroid match radius in pixels.
    pub radius: f64,
    pub precision: Precision,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: UVNetConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            gaussian: GaussianSpec::default(),
            postprocess: PostprocessConfig::default(),
            stain: StainParams::default(),
            synth: SynthConfig::default(),
            radius: 30.0,
            precision: Precision::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        self.gaussian.validate()?;
        self.stain.validate()?;
        self.synth.validate()?;
        if !(self.radius > 0.0) {
            return Err(PipelineError::Config(format!(
                "radius {} must be > 0",
                self.radius
            )));
        }
        Ok(())
    }
}
