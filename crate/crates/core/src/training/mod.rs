//! Alternating adversarial training: reconstruction, teacher, and fooling
//! losses; SGD with classical momentum; and the two-phase step that first
//! updates the teacher on detached distilled images, then the encoder and
//! decoder against the frozen teacher.

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;
use crate::tensor::TensorError;

mod log;
mod losses;
mod optimizer;
mod step;

pub use log::{StepRecord, TrainLog};
pub use losses::{avd_loss, generator_loss, reconstruction_loss, teacher_loss, LOG_EPS};
pub use optimizer::{sgd_momentum_step, AvdOptimizer, OptimizerState};
pub(crate) use optimizer::trainables;
pub use step::{params_checksum, train, train_step};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("lambda {0} outside [0,1]")]
    LambdaOutOfRange(f64),
    #[error("learning rate {0} must be positive and finite")]
    LearningRateNotPositive(f64),
    #[error("momentum {0} outside [0,1)")]
    MomentumOutOfRange(f64),
    #[error("lr decay {0} must be positive and finite")]
    LrDecayNotPositive(f64),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("frame pool needs {need} frames (10x batch), dataset has {available}")]
    PoolTooSmall { available: usize, need: usize },
    #[error("non-finite {which} loss ({value}) at epoch {epoch} step {step}")]
    NonFiniteLoss { which: &'static str, value: f64, epoch: usize, step: usize },
    #[error("optimizer tracks {expected} parameters, got {got}")]
    StateCount { expected: usize, got: usize },
    #[error("optimizer velocity {index} has {expected} elements, parameter has {got}")]
    StateShape { index: usize, expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Hyperparameters of one training run. Same config and dataset, same run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the reconstruction term; `1 - lambda` weighs the fooling
    /// term. At exactly 1 the adversary is out of the loop entirely.
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    /// Multiplied onto the learning rate after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Teacher updates per batch before the joint encoder/decoder update.
    pub teacher_updates_per_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            lr: 3e-3,
            momentum: 0.9,
            lr_decay: 0.1,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            teacher_updates_per_batch: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::LambdaOutOfRange(self.lambda));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(TrainError::LearningRateNotPositive(self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::MomentumOutOfRange(self.momentum));
        }
        if !self.lr_decay.is_finite() || self.lr_decay <= 0.0 {
            return Err(TrainError::LrDecayNotPositive(self.lr_decay));
        }
        if self.batch_size == 0 {
            return Err(TrainError::ZeroBatchSize);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_invariants_are_enforced() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = |c: TrainConfig| c.validate().unwrap_err();
        assert!(matches!(
            bad(TrainConfig { lambda: 1.5, ..TrainConfig::default() }),
            TrainError::LambdaOutOfRange(_)
        ));
        assert!(matches!(
            bad(TrainConfig { lambda: f64::NAN, ..TrainConfig::default() }),
            TrainError::LambdaOutOfRange(_)
        ));
        assert!(matches!(
            bad(TrainConfig { lr: 0.0, ..TrainConfig::default() }),
            TrainError::LearningRateNotPositive(_)
        ));
        assert!(matches!(
            bad(TrainConfig { momentum: 1.0, ..TrainConfig::default() }),
            TrainError::MomentumOutOfRange(_)
        ));
        assert!(matches!(
            bad(TrainConfig { lr_decay: 0.0, ..TrainConfig::default() }),
            TrainError::LrDecayNotPositive(_)
        ));
        assert!(matches!(
            bad(TrainConfig { batch_size: 0, ..TrainConfig::default() }),
            TrainError::ZeroBatchSize
        ));
    }
}
