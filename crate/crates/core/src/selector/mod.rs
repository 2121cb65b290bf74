//! Behavior selection over frozen behaviors, trained jointly with a
//! supervised base-height estimator fed from a replay memory.

pub mod library;
pub mod memory;
pub mod train;
pub mod worker;

pub use library::{Behavior, BehaviorLibrary, Controller};
pub use memory::{ReplayMemory, ReplayPair};
pub use train::{collect_height_dataset, train_selector, SelectorMetrics, SelectorSetup, SelectorSummary};
pub use worker::SelectorWorker;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ObservationLayout, NUM_BEHAVIORS};
use crate::error::{Error, Result};
use crate::nn::{Mlp, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    /// Iterations `0..=warmup_iterations` feed the true height.
    pub warmup_iterations: usize,
    /// Pairs drawn from the memory per estimator step.
    pub regression_samples: usize,
    /// Adam steps on the estimator after each iteration.
    pub estimator_steps: usize,
    /// Control steps per selector decision.
    pub decision_period: usize,
    pub memory_capacity: usize,
    pub estimator_learning_rate: f64,
    pub estimator_hidden: Vec<usize>,
    /// Size of the fixed held-out set used for the estimator metrics.
    pub holdout_pairs: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            warmup_iterations: 50,
            regression_samples: 4096,
            estimator_steps: 8,
            decision_period: 100,
            memory_capacity: 200_000,
            estimator_learning_rate: 1e-3,
            estimator_hidden: crate::nn::HIDDEN.to_vec(),
            holdout_pairs: 2000,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("selector.{m}")));
        if self.regression_samples == 0 || self.estimator_steps == 0 {
            return bad("regression_samples and estimator_steps must be at least 1");
        }
        if self.decision_period == 0 || self.memory_capacity == 0 {
            return bad("decision_period and memory_capacity must be at least 1");
        }
        if !(self.estimator_learning_rate > 0.0 && self.estimator_learning_rate.is_finite()) {
            return bad("estimator_learning_rate must be positive");
        }
        if self.estimator_hidden.is_empty() || self.estimator_hidden.contains(&0) {
            return bad("estimator_hidden must be non-empty with positive widths");
        }
        Ok(())
    }
}

/// Whether iteration `i` uses the estimated height.
pub fn uses_estimated_height(iteration: u64, warmup_iterations: usize) -> bool {
    iteration > warmup_iterations as u64
}

/// Height estimate from a raw (unscaled) estimator observation.
pub fn height_estimate(net: &Mlp, obs: &[f64], history_len: usize) -> Result<f64> {
    let layout = ObservationLayout::height_estimator(history_len);
    if obs.len() != layout.len || net.input_dim() != layout.len || net.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            what: "height estimator input",
            expected: layout.len,
            got: if obs.len() != layout.len { obs.len() } else { net.input_dim() },
        });
    }
    let input: Vec<f64> = obs.iter().zip(layout.input_scale()).map(|(o, s)| o * s).collect();
    Ok(net.forward(&input)?[0])
}

/// One-hot behavior choice: sampled when `rng` is given, argmax otherwise.
pub fn select_behavior<R: Rng + ?Sized>(policy: &Policy, obs: &[f64], rng: Option<&mut R>) -> Result<[f64; NUM_BEHAVIORS]> {
    if !matches!(policy, Policy::Categorical(_)) || policy.action_dim() != NUM_BEHAVIORS {
        return Err(Error::InvalidArgument("selector needs a categorical policy over the behaviors".into()));
    }
    let a = match rng {
        Some(rng) => policy.sample(obs, rng)?.0,
        None => policy.deterministic_action(obs)?,
    };
    Ok(std::array::from_fn(|i| a[i]))
}

pub fn one_hot_index(a: &[f64]) -> Result<usize> {
    match a.iter().position(|&v| v == 1.0) {
        Some(i) if a.iter().filter(|&&v| v != 0.0).count() == 1 => Ok(i),
        _ => Err(Error::InvalidArgument(format!("not a one-hot action: {a:?}"))),
    }
}
