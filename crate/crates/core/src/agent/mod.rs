//! Policy-gradient agent over the discretized action grid.

pub mod checkpoint;
pub mod net;
pub mod policy;
pub mod ppo;

pub use checkpoint::PolicyCheckpoint;
pub use policy::{observe, ActMode, HeadKind, Normalizer, PolicyNet};
pub use ppo::{train, train_policy, CurvePoint, LearningCurve, TrainConfig};
