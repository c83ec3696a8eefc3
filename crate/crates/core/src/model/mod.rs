//! Latent-factor click model: scoring, losses, sparse AdaGrad training and
//! persistence.

mod lfm;
mod loss;
mod persist;

pub use lfm::{Hyper, LatentFactorModel, ModelSnapshot, ParamId, Scorer};
pub use loss::{clamp_prob, cross_entropy, logit, logloss, sigmoid, LossValue, P_FLOOR};
pub use persist::{FORMAT_VERSION, MAGIC};

pub(crate) use lfm::dot;
