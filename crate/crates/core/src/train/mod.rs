//! Optimizer, learning-rate schedule, byte-level data pipeline, the
//! training loop and the token-dependent shift task.

mod data;
mod optim;
mod schedule;
mod toy;
mod trainer;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use data::{detokenize, make_batches, tokenize_bytes, Batch, Batches, TrainStream};
pub use optim::{AdamW, Optimizer};
pub use schedule::lr_at;
pub use toy::{
    toy_task_generate, toy_task_train, ToyGenerator, ToyResult, ToySet, ToyTaskSpec,
    ToyTrainConfig, NEXT, NEXTNEXT,
};
pub use trainer::{evaluate, StepReport, Trainer};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Smoothing factor for the reported train-loss curve.
pub const EMA_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data_path: String,
    pub batch_size: usize,
    pub seq_len: usize,
    pub steps: usize,
    pub warmup_steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub log_every: usize,
    pub eval_every: usize,
    /// Fraction of the corpus, taken from its end, held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            data_path: String::new(),
            batch_size: 16,
            seq_len: 64,
            steps: 2000,
            warmup_steps: 50,
            lr_max: 2e-3,
            lr_min: 4e-4,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            log_every: 10,
            eval_every: 200,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    // Negated comparisons reject NaN as well as out-of-range values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let mut problems: Vec<String> = Vec::new();
        if self.batch_size == 0 || self.seq_len == 0 || self.steps == 0 {
            problems.push("batch_size, seq_len and steps must be positive".into());
        }
        if self.seq_len > self.model.max_seq_len {
            problems.push(format!(
                "seq_len ({}) exceeds max_seq_len ({})",
                self.seq_len, self.model.max_seq_len
            ));
        }
        if self.warmup_steps >= self.steps {
            problems.push(format!(
                "warmup_steps ({}) must be below steps ({})",
                self.warmup_steps, self.steps
            ));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            problems.push(format!(
                "need 0 <= lr_min ({}) <= lr_max ({})",
                self.lr_min, self.lr_max
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            problems.push("betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            problems.push(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            problems.push(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            ));
        }
        if self.log_every == 0 || self.eval_every == 0 {
            problems.push("log_every and eval_every must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub tokens_seen: u64,
    pub wall_ms: Option<u64>,
}

/// Exponential moving average `e_i = α·x_i + (1-α)·e_{i-1}`, seeded with
/// the first value.
pub fn ema(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc: Option<f64> = None;
    for &v in values {
        let e = match acc {
            None => v,
            Some(prev) => alpha * v + (1.0 - alpha) * prev,
        };
        acc = Some(e);
        out.push(e);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr_min: 3e-3,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig {
            warmup_steps: 2000,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            seq_len: 129,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ema_smooths() {
        assert_eq!(ema(&[2.0, 0.0], 0.5), [2.0, 1.0]);
        assert!(ema(&[], 0.05).is_empty());
    }
}
