//! Supervised fine-tuning: class-weighted cross-entropy, Adam, the SAM
//! wrapper and the epoch loop.

mod finetune;
mod loss;
mod optim;

pub use finetune::{batch_loss_and_grad, finetune, predict_scores, prepare_input, EpochMetrics, Example, FinetuneReport};
pub use loss::{class_weight, one_hot, sample_weights, weighted_cross_entropy};
pub use optim::{plain_step, sam_step, Adam, Optimizer, Sgd, StepOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "adam+sam")]
    AdamSam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

/// Positive-class loss weight: a number, or `"auto"` for the training
/// split's negative/positive ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PosWeight {
    Fixed(f64),
    Auto(Auto),
}

impl Default for PosWeight {
    fn default() -> Self {
        PosWeight::Auto(Auto::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub sam_rho: f64,
    pub pos_weight: PosWeight,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-6,
            batch_size: 24,
            epochs: 10,
            optimizer: OptimizerKind::Adam,
            sam_rho: 0.05,
            pos_weight: PosWeight::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("train.learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("train.batch_size must be at least 1"));
        }
        if self.optimizer == OptimizerKind::AdamSam && !(self.sam_rho > 0.0 && self.sam_rho.is_finite()) {
            return Err(invalid("train.sam_rho must be positive when SAM is on"));
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid("train.pos_weight must be positive"));
            }
        }
        Ok(())
    }
}
