//! Group-relative policy optimization with asymmetric clipping and no KL
//! penalty, plus a small sequence policy to train with it.

mod advantage;
mod objective;
pub mod policy;
mod trainer;

use serde::{Deserialize, Serialize};

pub use advantage::compute_advantages;
pub use objective::{grpo_objective, ClipRange, ObjectiveValue};
pub use policy::{PolicyParams, SequenceJudge};
pub use trainer::{
    policy_gradient, surrogate_loss, train_iteration, GradientOutput, IterationStats,
    PreparedGroup, TrainGroup,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Lower clip width. Default 0.2 is a choice, not a published value.
    pub eps_low: f64,
    /// Upper clip width, kept above `eps_low` so low-probability tokens can
    /// grow. Default 0.28.
    pub eps_high: f64,
    pub learning_rate: f64,
    pub train_batch_size: usize,
    pub mini_batch_size: usize,
    pub grad_updates_per_iteration: usize,
    pub std_guard: f64,
    /// Always 0. Kept so configs state the removal explicitly.
    pub kl_coefficient: f64,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
            learning_rate: 0.5,
            train_batch_size: 64,
            mini_batch_size: 16,
            grad_updates_per_iteration: 4,
            std_guard: 1e-6,
            kl_coefficient: 0.0,
            temperature: 1.0,
            top_p: 1.0,
        }
    }
}

impl GrpoConfig {
    /// Large-scale settings: batch 512, mini-batch 32, 16 updates, lr 1e-6.
    pub fn large_scale() -> Self {
        Self {
            learning_rate: 1e-6,
            train_batch_size: 512,
            mini_batch_size: 32,
            grad_updates_per_iteration: 16,
            ..Self::default()
        }
    }

    pub fn clip_range(&self) -> Result<ClipRange> {
        ClipRange::new(self.eps_low, self.eps_high)
    }

    pub fn num_mini_batches(&self) -> usize {
        self.train_batch_size / self.mini_batch_size.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.clip_range()?;
        if self.kl_coefficient != 0.0 {
            return Err(Error::InvalidConfig("kl_coefficient must be 0".into()));
        }
        if self.mini_batch_size == 0 || self.train_batch_size == 0 {
            return Err(Error::InvalidConfig("batch sizes must be positive".into()));
        }
        if self.train_batch_size % self.mini_batch_size != 0 {
            return Err(Error::BatchNotDivisible {
                batch: self.train_batch_size,
                mini: self.mini_batch_size,
            });
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.std_guard >= 0.0) {
            return Err(Error::InvalidConfig("std_guard must be >= 0".into()));
        }
        if !(self.temperature > 0.0) || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig("temperature > 0 and top_p in (0, 1] required".into()));
        }
        Ok(())
    }
}
