//! Proximal policy optimization in actor-critic mode.

pub mod gae;
pub mod rollout;
pub mod surrogate;
pub mod train;
pub mod update;

pub use gae::{gae_advantages, importance_ratio, GaeStep, RATIO_SENTINEL};
pub use rollout::{collect_rollout, RolloutBatch, RolloutStats, RolloutWorker, TaskWorker, Transition, WorkerStep};
pub use surrogate::{clipped_surrogate, surrogate_term, SurrogateStats};
pub use train::{train, IterationMetrics, TrainSetup, TrainSummary};
pub use update::{evaluate_surrogate, ppo_update, UpdateStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Decays linearly to zero at the last iteration.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    /// Defaults to a quarter of the batch.
    pub minibatch_size: Option<usize>,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub iterations: usize,
    pub horizon: usize,
    pub num_envs: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm bound per network; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
    pub checkpoint_interval: usize,
    pub hidden: Vec<usize>,
    pub initial_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 4,
            minibatch_size: None,
            learning_rate: 3e-4,
            lr_schedule: LrSchedule::Constant,
            iterations: 200,
            horizon: 400,
            num_envs: 16,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
            checkpoint_interval: 200,
            hidden: crate::nn::HIDDEN.to_vec(),
            initial_std: crate::nn::INITIAL_STD,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo.{m}")));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.horizon == 0 || self.num_envs == 0 || self.iterations == 0 {
            return bad("epochs, horizon, num_envs and iterations must be at least 1");
        }
        if self.minibatch_size == Some(0) {
            return bad("minibatch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("value_coef and entropy_coef must be non-negative");
        }
        if matches!(self.max_grad_norm, Some(g) if !(g > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty with positive widths");
        }
        if !(self.initial_std > 0.0 && self.initial_std.is_finite()) {
            return bad("initial_std must be positive");
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.num_envs * self.horizon
    }

    pub fn effective_minibatch(&self) -> usize {
        self.minibatch_size
            .unwrap_or_else(|| self.batch_size().div_ceil(4))
            .min(self.batch_size())
            .max(1)
    }

    /// Value predictions are `value_scale() * net(s)`, keeping the network
    /// output near unit scale for discounted returns.
    pub fn value_scale(&self) -> f64 {
        if self.gamma < 1.0 {
            (1.0 / (1.0 - self.gamma)).min(self.horizon as f64)
        } else {
            self.horizon as f64
        }
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Linear => {
                let frac = 1.0 - iteration as f64 / self.iterations as f64;
                self.learning_rate * frac.max(0.0)
            }
        }
    }
}
