//! Preference reward models over feature vectors, gradient-feature data
//! selection with optimal transport, and progressive multi-phase training.
//!
//! Everything numeric is generic over [`num::Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar for callers that do not care.

pub mod align;
pub mod data;
pub mod error;
pub mod gradfeat;
pub mod losses;
pub mod model;
pub mod num;
pub mod ot;
pub mod seed;
pub mod select;
pub mod synthetic;
pub mod train;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use data::{Dataset, FeatureVector, Modality, PhaseConfig, PreferenceSample};
pub use error::{Error, Result};
pub use losses::LossKind;
pub use model::{ParamVector, RewardModel, Scorer};
pub use num::Scalar;

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Sample64 = PreferenceSample<f64>;
pub type Sample32 = PreferenceSample<f32>;
pub type RewardModel64 = RewardModel<f64>;
pub type RewardModel32 = RewardModel<f32>;
