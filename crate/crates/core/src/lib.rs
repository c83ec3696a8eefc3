//! Streaming CTR training with unbiased accidental-click filtering.
//!
//! The crate provides a latent-factor click model trained one pass with
//! sparse AdaGrad, an auxiliary accidental-click (AC) model whose predictions
//! become soft labels for the click model, a deterministic synthetic
//! marketplace to generate labelled traffic, and the evaluation harness used
//! to compare the training modes.

pub mod ac;
pub mod click;
pub mod config;
pub mod downsample;
pub mod error;
pub mod eval;
pub mod event;
pub mod eventlog;
pub mod hashing;
pub mod model;
pub mod pipeline;
pub mod schema;
pub mod sim;

pub use ac::{AcCounters, AcLabeler, AcTrainer, AcTrainingConfig};
pub use click::{ClickCounters, ClickMode, ClickTrainer, ClickTrainingConfig};
pub use error::{Error, Result};
pub use event::{classify_click, ClickClass, Event};
pub use model::{Hyper, LatentFactorModel, ModelSnapshot, Scorer};
pub use schema::{FeatureField, FeatureSchema, FeatureValue, Side, ValueId};
