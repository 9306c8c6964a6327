//! Multi-task optimization of the captioning model.

mod adamw;
mod checkpoint;
mod fit;
mod gradcheck;
mod loss;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adamw::{clip_grad_norm, AdamW, AdamWConfig};
pub use checkpoint::{config_digest, Checkpoint, ParamRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fit::{fit, fit_until, read_loss_csv, write_loss_csv, StepLog, Trainer, LOSS_CSV_HEADER};
pub use gradcheck::{is_key_bias, ModelGradCheck};
pub use loss::{ce_loss, ce_sum, cma_loss, total_loss, CmaLoss};
pub use schedule::lr_at;

use crate::han::HanError;
use crate::model::ModelError;
use crate::numeric::{LrGroup, NumericError};

/// Peak learning rate per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRates {
    pub vision: f64,
    pub graph: f64,
    pub other: f64,
}

impl GroupRates {
    pub fn get(&self, g: LrGroup) -> f64 {
        match g {
            LrGroup::Vision => self.vision,
            LrGroup::Graph => self.graph,
            LrGroup::Other => self.other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the alignment loss.
    pub beta: f64,
    pub weight_decay: f64,
    pub warmup_iters: u64,
    pub peak_lr: GroupRates,
    pub final_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: u64,
    pub batch_size: usize,
    /// Global gradient-norm limit; off when absent.
    pub grad_clip: Option<f64>,
    /// Stop the alignment gradient at the image embedding.
    pub cma_detach_image: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            weight_decay: 0.02,
            warmup_iters: 1000,
            peak_lr: GroupRates {
                vision: 5e-5,
                graph: 1e-2,
                other: 1e-4,
            },
            final_lr: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 10,
            batch_size: 8,
            grad_clip: None,
            cma_detach_image: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        let rates = [self.peak_lr.vision, self.peak_lr.graph, self.peak_lr.other, self.final_lr];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if self.warmup_iters < 1 {
            return bad("warmup_iters must be at least 1".into());
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("invalid optimizer settings".into());
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{logits} logit rows but {targets} targets")]
    LengthMismatch { logits: usize, targets: usize },
    #[error("no non-padding targets")]
    NoTargets,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error("no training captions")]
    NoSamples,
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("loss history: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Han(#[from] HanError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("gradient check: {0}")]
    GradCheck(#[from] crate::numeric::GradCheckError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for beta in [-0.1, 1.5, f64::NAN] {
            let c = TrainConfig {
                beta,
                ..Default::default()
            };
            assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        }
        let c = TrainConfig {
            warmup_iters: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.peak_lr.graph = 0.0;
        assert!(c.validate().is_err());
    }
}
