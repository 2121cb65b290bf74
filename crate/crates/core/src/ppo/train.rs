//! The collect, estimate, update loop with metrics and checkpoints.
//!
//! Iteration `i` draws all of its randomness from streams keyed by
//! `(seed, i)`: every environment is reset at the start of the iteration and
//! the minibatch shuffle has its own stream. The state carried between
//! iterations is therefore just the networks and their optimizers, which is
//! exactly what a checkpoint holds, so a resumed run is bit-identical to an
//! uninterrupted one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rollout::{collect_rollout, TaskWorker};
use super::update::ppo_update;
use super::PpoConfig;
use crate::env::{CostVector, Env, EnvConfig, ObservationLayout, TaskKind};
use crate::error::{Error, Result};
use crate::metrics::{truncate_iterations, JsonlWriter};
use crate::nn::{self, AdamState, Checkpoint, Mlp, NetRecord, Policy, StoredNet};
use crate::seeding::rng_for;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_ROLLOUT: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Everything that determines a behavior training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub seed: u64,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        if self.env.task.kind == TaskKind::Selector {
            return Err(Error::Config("use selector training for the selector task".into()));
        }
        Ok(())
    }
}

/// One metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub learning_rate: f64,
    /// Mean per-step reward over the iteration's batch.
    pub average_ll_reward: f64,
    pub mean_value: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    /// Mean of `c_w + c_v` (more negative is better tracking).
    pub tracking_cost: f64,
    pub terminations: usize,
    pub diverged: usize,
    pub max_abs_torque: f64,
    pub adam_steps: usize,
    pub rolled_back: bool,
    pub costs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// Metrics of the iterations run by this call.
    pub metrics: Vec<IterationMetrics>,
    pub checkpoints: Vec<PathBuf>,
    pub policy: Policy,
    pub value: Mlp,
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("iter_{iteration:06}.bin"))
}

/// Fresh policy and value networks for `setup`.
pub fn initial_networks(setup: &TrainSetup) -> Result<(Policy, Mlp)> {
    let layout = ObservationLayout::for_task(setup.env.task.kind, setup.env.history_len);
    let mut rng = rng_for(&[setup.seed, STREAM_INIT]);
    let mut policy = nn::gaussian_policy(layout.len, crate::dynamics::NUM_JOINTS, &setup.ppo.hidden, &mut rng)?;
    if let Policy::Gaussian(g) = &mut policy {
        g.log_std.fill(setup.ppo.initial_std.ln());
    }
    let value = nn::regressor(layout.len, &setup.ppo.hidden, &mut rng)?;
    Ok((policy, value))
}

fn metadata(setup: &TrainSetup, iteration: u64) -> serde_json::Value {
    let layout = ObservationLayout::for_task(setup.env.task.kind, setup.env.history_len);
    serde_json::json!({
        "kind": "behavior",
        "task": setup.env.task.kind.name(),
        "iteration": iteration,
        "seed": setup.seed,
        "observation_layout": layout,
        "setup": setup,
    })
}

struct Learner {
    policy: Policy,
    value: Mlp,
    policy_adam: AdamState,
    value_adam: AdamState,
}

impl Learner {
    fn save(&self, setup: &TrainSetup, out_dir: &Path, iteration: u64) -> Result<PathBuf> {
        let ckpt = Checkpoint {
            iteration,
            nets: vec![
                NetRecord {
                    name: "policy".into(),
                    net: StoredNet::Policy(self.policy.clone()),
                    adam: Some(self.policy_adam.clone()),
                },
                NetRecord {
                    name: "value".into(),
                    net: StoredNet::Regressor(self.value.clone()),
                    adam: Some(self.value_adam.clone()),
                },
            ],
        };
        let path = checkpoint_path(out_dir, iteration);
        ckpt.save(&path, &metadata(setup, iteration))?;
        Ok(path)
    }

    fn load(setup: &TrainSetup, path: &Path) -> Result<(Self, u64)> {
        let ckpt = Checkpoint::load(path)?;
        let (fresh_policy, fresh_value) = initial_networks(setup)?;
        let missing = |n: &str| Error::Checkpoint(format!("{}: no '{n}' record", path.display()));
        let p = ckpt.net("policy").ok_or_else(|| missing("policy"))?;
        let v = ckpt.net("value").ok_or_else(|| missing("value"))?;
        let policy = match &p.net {
            StoredNet::Policy(pol) if pol.mlp().sizes() == fresh_policy.mlp().sizes() => pol.clone(),
            _ => return Err(Error::Checkpoint(format!("{}: policy does not match the task layout", path.display()))),
        };
        let value = match &v.net {
            StoredNet::Regressor(m) if m.sizes() == fresh_value.sizes() => m.clone(),
            _ => return Err(Error::Checkpoint(format!("{}: value net does not match the task layout", path.display()))),
        };
        let policy_adam = p.adam.clone().unwrap_or_else(|| AdamState::new(policy.num_params(), setup.ppo.learning_rate));
        let value_adam = v.adam.clone().unwrap_or_else(|| AdamState::new(value.num_params(), setup.ppo.learning_rate));
        Ok((Learner { policy, value, policy_adam, value_adam }, ckpt.iteration))
    }
}

/// Trains a behavior policy, writing `metrics.jsonl` and
/// `checkpoints/iter_NNNNNN.bin` under `out_dir`. A checkpoint is written
/// whenever the number of completed iterations is a multiple of the
/// checkpoint interval (including zero). With `resume`, training continues
/// from that checkpoint and metrics rows from later iterations are dropped
/// first.
pub fn train(setup: &TrainSetup, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    setup.validate()?;
    let cfg = &setup.ppo;
    let (mut learner, start) = match resume {
        Some(path) => Learner::load(setup, path)?,
        None => {
            let (policy, value) = initial_networks(setup)?;
            let learner = Learner {
                policy_adam: AdamState::new(policy.num_params(), cfg.learning_rate),
                value_adam: AdamState::new(value.num_params(), cfg.learning_rate),
                policy,
                value,
            };
            (learner, 0)
        }
    };
    if start > cfg.iterations as u64 {
        return Err(Error::Checkpoint(format!(
            "checkpoint at iteration {start} is past the configured {} iterations",
            cfg.iterations
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    if resume.is_some() {
        truncate_iterations(&metrics_path, start)?;
    } else if metrics_path.exists() {
        std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let mut writer = JsonlWriter::append(&metrics_path)?;

    let mut checkpoints = Vec::new();
    if resume.is_none() {
        checkpoints.push(learner.save(setup, out_dir, 0)?);
    }
    let mut workers = (0..cfg.num_envs)
        .map(|e| TaskWorker::new(Env::new(setup.env.clone(), rng_for(&[setup.seed, STREAM_ROLLOUT, u64::MAX, e as u64]))?))
        .collect::<Result<Vec<_>>>()?;

    let mut metrics = Vec::new();
    for i in start..cfg.iterations as u64 {
        let batch = collect_rollout(
            &mut workers,
            &learner.policy,
            &learner.value,
            cfg.horizon,
            cfg.value_scale(),
            &[setup.seed, STREAM_ROLLOUT, i],
            cfg.gamma,
            cfg.lambda,
        )?;
        let lr = cfg.learning_rate_at(i as usize);
        learner.policy_adam.learning_rate = lr;
        learner.value_adam.learning_rate = lr;
        let mut shuffle = rng_for(&[setup.seed, STREAM_SHUFFLE, i]);
        let stats = ppo_update(
            &batch,
            &mut learner.policy,
            &mut learner.value,
            &mut learner.policy_adam,
            &mut learner.value_adam,
            cfg,
            &mut shuffle,
        )?;
        let row = IterationMetrics {
            iteration: i,
            surrogate_loss: stats.surrogate_loss,
            value_loss: stats.value_loss,
            learning_rate: lr,
            average_ll_reward: batch.stats.mean_reward,
            mean_value: batch.stats.mean_value,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
            entropy: stats.entropy,
            tracking_cost: batch.stats.mean_tracking_cost,
            terminations: batch.stats.terminations,
            diverged: batch.stats.diverged,
            max_abs_torque: batch.stats.max_abs_torque,
            adam_steps: stats.adam_steps,
            rolled_back: stats.rolled_back,
            costs: CostVector::NAMES
                .iter()
                .zip(batch.stats.mean_costs)
                .map(|(n, c)| (n.to_string(), c))
                .collect(),
        };
        log::info!(
            "iter {i}: reward {:.4} surrogate {:.4} value {:.4} kl {:.4}",
            row.average_ll_reward,
            row.surrogate_loss,
            row.value_loss,
            row.approx_kl
        );
        writer.write(&row)?;
        metrics.push(row);
        let done = i + 1;
        if done % cfg.checkpoint_interval as u64 == 0 {
            checkpoints.push(learner.save(setup, out_dir, done)?);
        }
    }
    Ok(TrainSummary {
        metrics,
        checkpoints,
        policy: learner.policy,
        value: learner.value,
    })
}
