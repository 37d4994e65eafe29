//! TKFNet: a texture-aware facial expression classifier built on a small
//! reverse-mode autodiff engine.
//!
//! Tensors are NHWC. Parameters live in a [`ParamStore`]; each forward pass
//! records onto a fresh [`Tape`], and gradients are read back from it.

pub mod backbone;
pub mod data;
pub mod dcif;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod par;
pub mod params;
pub mod tafe;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod weights;

pub use backbone::{build_backbone, Backbone, BackboneConfig};
pub use data::{Dataset, DataError, Sample};
pub use dcif::Dcif;
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{ModelConfig, ModelKind, Tkfnet};
pub use ops::{Padding, PoolKind};
pub use params::{ParamId, ParamStore};
pub use tafe::Tafe;
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{Real, Shape, Tensor, TensorError};
pub use train::{evaluate, fit, LrSchedule, Metrics, OptimizerState, TrainConfig};
