//! Patch-level mitosis detection pipeline built on `uvnet-core`:
//! synthetic data, stain normalization, heatmap targets, training, inference
//! and evaluation, each usable as a library call or through the `uvnet` CLI.

pub mod augment;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
mod fsutil;
pub mod imageio;
pub mod infer;
pub mod manifest;
pub mod normalize;
pub mod split;
pub mod synth;
pub mod train;

pub use augment::{AugmentConfig, Transform};
pub use config::{PipelineConfig, Precision, OUTPUT_DIR_ENV};
pub use dataset::{load_samples, make_targets, Sample, TargetSet};
pub use error::{PipelineError, Result};
pub use infer::{evaluate, infer, EvalReport, ImageDetections, InferConfig};
pub use manifest::{ingest, DatasetManifest, ManifestEntry, ManifestMetadata};
pub use normalize::{normalize_dataset, StainReference};
pub use split::{split, SplitSpec, Splits};
pub use synth::SynthConfig;
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};
