//! Mitosis detection with UV-Net.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`). Gradient checks
//! and tests run in `f64`; training may use `f32`. Concrete aliases for both
//! precisions are exported below.
//!
//! Modules, in pipeline order:
//!
//! - [`stain`]: Macenko stain estimation and normalization
//! - [`targets`]: box annotations to Gaussian heatmaps
//! - [`tensor`], [`ops`], [`autodiff`], [`optim`]: tensor engine, reverse-mode
//!   gradients, Huber loss, Adam
//! - [`uvnet`]: V-blocks and the encoder/decoder network
//! - [`postprocess`]: Otsu, median filter, watershed, detections
//! - [`eval`]: centroid matching and precision/recall/F1
//! - [`checkpoint`]: versioned JSON weight container

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod ops;
pub mod optim;
pub mod postprocess;
pub mod scalar;
pub mod stain;
pub mod targets;
pub mod tensor;
pub mod uvnet;

pub use autodiff::{Gradients, ParamId, ParamStore, Parameter, Tape, Var};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use eval::{compute_metrics, match_detections, MatchResult, MetricsReport};
pub use optim::{adam_step, AdamConfig, HuberConfig};
pub use postprocess::{BinaryMask, Detection, LabelMap, PostprocessConfig};
pub use scalar::Real;
pub use stain::{OdImage, RgbImage, StainMatrix, StainParams};
pub use targets::{BoxAnnotation, Centroid, GaussianSpec, Label};
pub use tensor::{Shape, Tensor};
pub use uvnet::{UVNet, UVNetConfig, VBlockConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type UVNet32 = UVNet<f32>;
pub type UVNet64 = UVNet<f64>;
