//! Margin-based softmax losses on the hypersphere with adaptive hard-pair
//! emphasis, plus everything needed to exercise them end to end at desk
//! scale: analytic gradients, an EMA-driven difficulty parameter, synthetic
//! datasets, a deterministic SGD trainer with bit-exact checkpointing, and
//! verification/identification metrics.
//!
//! The independent reference implementations in [`oracle`] exist so the
//! production formulas can be checked against literal transcriptions and
//! finite differences rather than against themselves.

pub mod curriculum;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod margin_losses;
pub mod numerics;
pub mod oracle;
pub mod rng;
pub mod trainer;

pub use curriculum::{CurriculumState, MomentumPlacement, StatisticKind};
pub use error::{Error, ErrorCategory, Result};
pub use margin_losses::{backward, forward, CosineBatch, LossOutput, LossVariant, VariantKind};
pub use numerics::{ClassifierMatrix, Matrix};
pub use trainer::{Checkpoint, ModelParams, TrainConfig, TrainTrace};
