use serde::{Deserialize, Serialize};

use crate::corpus::VOCAB_SIZE;
use crate::error::{Error, Result};

/// Architecture and training recipe of the byte-level transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Maximum sequence length; also the training row length.
    pub context_window: usize,
    pub layer_count: usize,
    pub model_width: usize,
    pub head_count: usize,
    pub mlp_ratio: usize,
    pub init_std: f64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    /// Floor of the cosine decay.
    pub min_lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    /// Sequences per step.
    pub batch_size: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            context_window: 128,
            layer_count: 2,
            model_width: 128,
            head_count: 4,
            mlp_ratio: 4,
            init_std: 0.02,
            warmup_steps: 100,
            peak_lr: 3e-3,
            min_lr: 3e-4,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            batch_size: 16,
            total_steps: 2500,
            checkpoint_every: 250,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("model config: {m}")));
        if self.vocab_size == 0 || self.layer_count == 0 || self.model_width == 0 {
            return bad("vocab_size, layer_count and model_width must be positive");
        }
        if self.head_count == 0 || self.model_width % self.head_count != 0 {
            return bad("model_width must be a positive multiple of head_count");
        }
        if self.context_window < 2 {
            return bad("context_window must be at least 2");
        }
        if self.checkpoint_every == 0 || self.batch_size == 0 || self.mlp_ratio == 0 {
            return bad("checkpoint_every, batch_size and mlp_ratio must be positive");
        }
        if !(self.peak_lr > 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.peak_lr) {
            return bad("need 0 <= min_lr <= peak_lr and peak_lr > 0");
        }
        Ok(())
    }

    /// Checks that a `k + l` probe window fits the context window.
    pub fn check_window(&self, k: usize, l: usize) -> Result<()> {
        if k + l > self.context_window {
            return Err(Error::ContextOverflow {
                len: k + l,
                window: self.context_window,
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_width / self.head_count
    }

    pub fn hidden_width(&self) -> usize {
        self.model_width * self.mlp_ratio
    }

    /// Linear warmup to `peak_lr`, then cosine decay to `min_lr` at
    /// `total_steps`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.min_lr + (self.peak_lr - self.min_lr) * cosine
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let cfg = ModelConfig {
            warmup_steps: 10,
            total_steps: 110,
            peak_lr: 1.0,
            min_lr: 0.1,
            ..ModelConfig::default()
        };
        assert!((cfg.learning_rate(0) - 0.1).abs() < 1e-12);
        assert!((cfg.learning_rate(9) - 1.0).abs() < 1e-12);
        assert!((cfg.learning_rate(10) - 1.0).abs() < 1e-12);
        assert!((cfg.learning_rate(60) - 0.55).abs() < 1e-12);
        assert!((cfg.learning_rate(110) - 0.1).abs() < 1e-12);
        assert!((cfg.learning_rate(500) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            head_count: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(ModelConfig::default().check_window(32, 64).is_ok());
        assert!(ModelConfig::default().check_window(64, 65).is_err());
    }
}
