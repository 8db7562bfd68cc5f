//! Shortcut-learning mitigation via specialist-teacher knowledge distillation
//! at intermediate network layers.
//!
//! The crate is organized around five subsystems:
//!
//! * [`data`] — seeded two-class synthetic image generation, parametric
//!   shortcut injection at controlled prevalence, and split construction
//!   (teacher / student / validation / test).
//! * [`model`] — tapped classifiers with linear classification probes at
//!   intermediate layers, probe fine-tuning, and per-layer
//!   confidence/AUC profiles.
//! * [`distill`] — the loss algebra (cross-entropy + per-layer KL
//!   distillation), layer pairing, teacher/student training protocols,
//!   and the augmentation baselines.
//! * [`metrics`] — AUC, per-group TPR disparity, and paired t-tests with
//!   Bonferroni correction.
//! * [`harness`] — experiment orchestration: k-fold cross-validation with
//!   a fixed test set, sweeps, caching, tables and figures.
//!
//! All numeric kernels are generic over the scalar type through the
//! [`num::Scalar`] trait; `f32` aliases are exported at the crate root and
//! are what the harness instantiates.

pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod num;
pub mod seed;

pub use error::{Error, Result};

/// Scalar type used by the experiment harness.
pub type DefaultScalar = f32;

/// `f32` image sample, as produced by the harness pipeline.
pub type Sample32 = data::ImageSample<f32>;
/// `f64` image sample, for high-precision tests and oracles.
pub type Sample64 = data::ImageSample<f64>;
/// `f32` tapped model.
pub type Model32 = model::TappedModel<f32>;
/// `f64` tapped model.
pub type Model64 = model::TappedModel<f64>;
