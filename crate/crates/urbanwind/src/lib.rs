//! A self-contained deep-learning engine and experiment harness for
//! translating 2D building height maps into pedestrian-level wind-velocity
//! fields.
//!
//! The crate provides:
//! - a from-scratch tensor/autodiff layer ([`tensor`], [`ops`], [`gradcheck`]),
//! - a configurable U-Net / ConvNeXt architecture family ([`model`]),
//! - Huber-loss AdamW training with checkpoints ([`train`], [`optim`], [`checkpoint`]),
//! - a procedural urban-scene generator with a potential-flow wind oracle ([`data`]),
//! - random hyperparameter search ([`search`]) and Pareto analysis ([`analysis`]).
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod search;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
