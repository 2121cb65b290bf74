//! Selector training: PPO on selector decisions plus estimator regression
//! from the replay memory after every iteration.
//!
//! The replay memory is not part of a checkpoint, so a resumed selector run
//! refills it from scratch and is not bit-identical to an uninterrupted one.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::library::BehaviorLibrary;
use super::memory::{ReplayMemory, ReplayPair};
use super::worker::SelectorWorker;
use super::{height_estimate, uses_estimated_height, SelectorConfig};
use crate::env::{Env, EnvConfig, ObservationLayout, TaskKind, NUM_BEHAVIORS};
use crate::error::{Error, Result};
use crate::metrics::{truncate_iterations, JsonlWriter};
use crate::nn::{self, AdamState, Checkpoint, Mlp, NetRecord, Policy, StoredNet};
use crate::ppo::rollout::collect_rollout;
use crate::ppo::train::{checkpoint_path, CHECKPOINT_DIR, METRICS_FILE, STREAM_INIT, STREAM_ROLLOUT, STREAM_SHUFFLE};
use crate::ppo::{ppo_update, PpoConfig};
use crate::seeding::rng_for;

pub const STREAM_MEMORY: u64 = 4;
pub const STREAM_HOLDOUT: u64 = 5;

/// Where the frozen behaviors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorSource {
    /// Constant-posture stand-ins.
    Scripted,
    /// Behavior checkpoints in library order: self-righting, standing up,
    /// locomotion.
    Checkpoints([PathBuf; NUM_BEHAVIORS]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorSetup {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub selector: SelectorConfig,
    pub behaviors: BehaviorSource,
    pub seed: u64,
}

impl SelectorSetup {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.selector.validate()?;
        if self.env.task.kind != TaskKind::Selector {
            return Err(Error::Config("selector training needs task = \"selector\"".into()));
        }
        Ok(())
    }

    pub fn library(&self) -> Result<BehaviorLibrary> {
        match &self.behaviors {
            BehaviorSource::Scripted => BehaviorLibrary::scripted(self.env.history_len),
            BehaviorSource::Checkpoints(paths) => BehaviorLibrary::load(paths, self.env.history_len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorMetrics {
    pub iteration: u64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub learning_rate: f64,
    /// Mean per-control-step reward over the iteration.
    pub average_ll_reward: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub tracking_cost: f64,
    pub diverged: usize,
    pub max_abs_torque: f64,
    pub rolled_back: bool,
    /// The iteration fed the estimated height to the policies.
    pub estimated_height: bool,
    /// Mean |height fed to the policies - true height| over the control
    /// steps; exactly 0 while the true height is used.
    pub fed_height_error: f64,
    /// Mean training loss of this iteration's estimator steps (NaN when the
    /// update was skipped).
    pub estimator_mse: f64,
    /// Estimator MSE on the fixed held-out set after the update.
    pub estimator_holdout_mse: f64,
    /// MSE of predicting the held-out mean height.
    pub estimator_baseline_mse: f64,
    /// Fraction of decisions per behavior.
    pub behavior_usage: [f64; NUM_BEHAVIORS],
    pub memory_len: usize,
}

#[derive(Debug, Clone)]
pub struct SelectorSummary {
    pub metrics: Vec<SelectorMetrics>,
    pub checkpoints: Vec<PathBuf>,
    pub selector: Policy,
    pub value: Mlp,
    pub estimator: Mlp,
    pub library: Arc<BehaviorLibrary>,
}

/// Height pairs from one env choosing behaviors uniformly at random, with
/// noisy estimator observations and true heights.
pub fn collect_height_dataset(
    library: &BehaviorLibrary,
    env_config: &EnvConfig,
    decision_period: usize,
    count: usize,
    stream: &[u64],
) -> Result<Vec<ReplayPair>> {
    let mut env = Env::new(env_config.clone(), rng_for(stream))?;
    let mut out = Vec::with_capacity(count);
    'outer: while out.len() < count {
        let index = env.rng().gen_range(0..NUM_BEHAVIORS);
        for _ in 0..decision_period {
            let obs = env.estimator_observation()?;
            out.push(ReplayPair { observation: obs, height: env.state().q[2] });
            if out.len() == count {
                break 'outer;
            }
            let targets = library.targets(index, &mut env, crate::env::HeightSource::True)?;
            let s = env.step(&targets)?;
            if s.terminal || s.truncated {
                env.reset();
                continue 'outer;
            }
        }
    }
    Ok(out)
}

fn estimator_inputs(pairs: &[&ReplayPair], scale: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(pairs.len() * scale.len());
    let mut y = Vec::with_capacity(pairs.len());
    for p in pairs {
        x.extend(p.observation.iter().zip(scale).map(|(o, s)| o * s));
        y.push(p.height);
    }
    (x, y)
}

/// Mean squared height error of `net` on `pairs`.
pub fn estimator_mse(net: &Mlp, pairs: &[ReplayPair], history_len: usize) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let e = height_estimate(net, &p.observation, history_len)? - p.height;
        total += e * e;
    }
    Ok(total / pairs.len().max(1) as f64)
}

fn baseline_mse(pairs: &[ReplayPair]) -> f64 {
    let n = pairs.len().max(1) as f64;
    let mean = pairs.iter().map(|p| p.height).sum::<f64>() / n;
    pairs.iter().map(|p| (p.height - mean).powi(2)).sum::<f64>() / n
}

struct Nets {
    selector: Policy,
    value: Mlp,
    estimator: Mlp,
    selector_adam: AdamState,
    value_adam: AdamState,
    estimator_adam: AdamState,
}

impl Nets {
    fn fresh(setup: &SelectorSetup) -> Result<Self> {
        let obs = ObservationLayout::for_task(TaskKind::Selector, setup.env.history_len).len;
        let est = ObservationLayout::height_estimator(setup.env.history_len).len;
        let mut rng = rng_for(&[setup.seed, STREAM_INIT]);
        let selector = nn::categorical_policy(obs, NUM_BEHAVIORS, &setup.ppo.hidden, &mut rng)?;
        let value = nn::regressor(obs, &setup.ppo.hidden, &mut rng)?;
        let estimator = nn::regressor(est, &setup.selector.estimator_hidden, &mut rng)?;
        Ok(Nets {
            selector_adam: AdamState::new(selector.num_params(), setup.ppo.learning_rate),
            value_adam: AdamState::new(value.num_params(), setup.ppo.learning_rate),
            estimator_adam: AdamState::new(estimator.num_params(), setup.selector.estimator_learning_rate),
            selector,
            value,
            estimator,
        })
    }

    fn save(&self, setup: &SelectorSetup, out_dir: &Path, iteration: u64) -> Result<PathBuf> {
        let ckpt = Checkpoint {
            iteration,
            nets: vec![
                NetRecord {
                    name: "selector".into(),
                    net: StoredNet::Policy(self.selector.clone()),
                    adam: Some(self.selector_adam.clone()),
                },
                NetRecord {
                    name: "selector_value".into(),
                    net: StoredNet::Regressor(self.value.clone()),
                    adam: Some(self.value_adam.clone()),
                },
                NetRecord {
                    name: "estimator".into(),
                    net: StoredNet::Regressor(self.estimator.clone()),
                    adam: Some(self.estimator_adam.clone()),
                },
            ],
        };
        let path = checkpoint_path(out_dir, iteration);
        let meta = serde_json::json!({
            "kind": "selector",
            "task": TaskKind::Selector.name(),
            "iteration": iteration,
            "seed": setup.seed,
            "observation_layout": ObservationLayout::for_task(TaskKind::Selector, setup.env.history_len),
            "setup": setup,
        });
        ckpt.save(&path, &meta)?;
        Ok(path)
    }

    fn load(setup: &SelectorSetup, path: &Path) -> Result<(Self, u64)> {
        let fresh = Self::fresh(setup)?;
        let ckpt = Checkpoint::load(path)?;
        let get = |name: &str| {
            ckpt.net(name)
                .ok_or_else(|| Error::Checkpoint(format!("{}: no '{name}' record", path.display())))
        };
        let mismatch = |name: &str| Error::Checkpoint(format!("{}: '{name}' does not match the layout", path.display()));
        let s = get("selector")?;
        let selector = match &s.net {
            StoredNet::Policy(p @ Policy::Categorical(_)) if p.mlp().sizes() == fresh.selector.mlp().sizes() => p.clone(),
            _ => return Err(mismatch("selector")),
        };
        let regressor = |name: &str, like: &Mlp| -> Result<(Mlp, Option<AdamState>)> {
            let r = get(name)?;
            match &r.net {
                StoredNet::Regressor(m) if m.sizes() == like.sizes() => Ok((m.clone(), r.adam.clone())),
                _ => Err(mismatch(name)),
            }
        };
        let (value, value_adam) = regressor("selector_value", &fresh.value)?;
        let (estimator, estimator_adam) = regressor("estimator", &fresh.estimator)?;
        Ok((
            Nets {
                selector_adam: s.adam.clone().unwrap_or(fresh.selector_adam),
                value_adam: value_adam.unwrap_or(fresh.value_adam),
                estimator_adam: estimator_adam.unwrap_or(fresh.estimator_adam),
                selector,
                value,
                estimator,
            },
            ckpt.iteration,
        ))
    }
}

/// Trains the selector and the height estimator. Iterations
/// `0..=warmup_iterations` feed the true height to the policies, later ones
/// the estimate. Output layout matches behavior training.
pub fn train_selector(setup: &SelectorSetup, out_dir: &Path, resume: Option<&Path>) -> Result<SelectorSummary> {
    setup.validate()?;
    let library = Arc::new(setup.library()?);
    let cfg = &setup.ppo;
    let sel = &setup.selector;
    let history_len = setup.env.history_len;
    let (mut nets, start) = match resume {
        Some(path) => Nets::load(setup, path)?,
        None => (Nets::fresh(setup)?, 0),
    };
    if start > cfg.iterations as u64 {
        return Err(Error::Checkpoint(format!(
            "checkpoint at iteration {start} is past the configured {} iterations",
            cfg.iterations
        )));
    }
    std::fs::create_dir_all(out_dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    if resume.is_some() {
        truncate_iterations(&metrics_path, start)?;
    } else if metrics_path.exists() {
        std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let mut writer = JsonlWriter::append(&metrics_path)?;

    let holdout = collect_height_dataset(
        &library,
        &setup.env,
        sel.decision_period,
        sel.holdout_pairs,
        &[setup.seed, STREAM_HOLDOUT],
    )?;
    let baseline = baseline_mse(&holdout);
    let est_scale = ObservationLayout::height_estimator(history_len).input_scale();
    let mut memory = ReplayMemory::new(sel.memory_capacity)?;

    let mut checkpoints = Vec::new();
    if resume.is_none() {
        checkpoints.push(nets.save(setup, out_dir, 0)?);
    }
    let mut workers = (0..cfg.num_envs)
        .map(|e| {
            let env = Env::new(setup.env.clone(), rng_for(&[setup.seed, STREAM_ROLLOUT, u64::MAX, e as u64]))?;
            SelectorWorker::new(env, Arc::clone(&library), Arc::new(nets.estimator.clone()), sel.decision_period)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut metrics = Vec::new();
    for i in start..cfg.iterations as u64 {
        let estimated = uses_estimated_height(i, sel.warmup_iterations);
        let snapshot = Arc::new(nets.estimator.clone());
        for w in &mut workers {
            w.configure(Arc::clone(&snapshot), estimated);
        }
        let batch = collect_rollout(
            &mut workers,
            &nets.selector,
            &nets.value,
            cfg.horizon,
            cfg.value_scale(),
            &[setup.seed, STREAM_ROLLOUT, i],
            cfg.gamma,
            cfg.lambda,
        )?;
        let mut usage = [0usize; NUM_BEHAVIORS];
        let mut fed = (0.0, 0usize);
        for w in &mut workers {
            let (sum, count) = w.take_fed_error();
            fed.0 += sum;
            fed.1 += count;
            for p in w.take_pairs() {
                memory.push(p);
            }
            for (u, c) in usage.iter_mut().zip(w.take_usage()) {
                *u += c;
            }
        }

        let mut est_loss = f64::NAN;
        if memory.is_empty() {
            log::warn!("iteration {i}: replay memory empty, estimator update skipped");
        } else {
            let mut rng = rng_for(&[setup.seed, STREAM_MEMORY, i]);
            let mut total = 0.0;
            for _ in 0..sel.estimator_steps {
                let sample = memory.sample(sel.regression_samples, &mut rng)?;
                let (x, y) = estimator_inputs(&sample, &est_scale);
                let (loss, grads) = nn::mse_loss_grad(&nets.estimator, &x, &y)?;
                total += loss;
                if let Err(e) = nets.estimator_adam.update(nets.estimator.params_mut(), &grads) {
                    log::warn!("iteration {i}: estimator step skipped: {e}");
                }
            }
            est_loss = total / sel.estimator_steps as f64;
        }

        let lr = cfg.learning_rate_at(i as usize);
        nets.selector_adam.learning_rate = lr;
        nets.value_adam.learning_rate = lr;
        let mut shuffle = rng_for(&[setup.seed, STREAM_SHUFFLE, i]);
        let stats = ppo_update(
            &batch,
            &mut nets.selector,
            &mut nets.value,
            &mut nets.selector_adam,
            &mut nets.value_adam,
            cfg,
            &mut shuffle,
        )?;
        let decisions = usage.iter().sum::<usize>().max(1) as f64;
        let row = SelectorMetrics {
            iteration: i,
            surrogate_loss: stats.surrogate_loss,
            value_loss: stats.value_loss,
            learning_rate: lr,
            average_ll_reward: batch.stats.mean_reward,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
            entropy: stats.entropy,
            tracking_cost: batch.stats.mean_tracking_cost,
            diverged: batch.stats.diverged,
            max_abs_torque: batch.stats.max_abs_torque,
            rolled_back: stats.rolled_back,
            estimated_height: estimated,
            fed_height_error: fed.0 / fed.1.max(1) as f64,
            estimator_mse: est_loss,
            estimator_holdout_mse: estimator_mse(&nets.estimator, &holdout, history_len)?,
            estimator_baseline_mse: baseline,
            behavior_usage: std::array::from_fn(|b| usage[b] as f64 / decisions),
            memory_len: memory.len(),
        };
        log::info!(
            "selector iter {i}: reward {:.4} estimator holdout {:.5} (baseline {:.5}) usage {:?}",
            row.average_ll_reward,
            row.estimator_holdout_mse,
            baseline,
            row.behavior_usage
        );
        writer.write(&row)?;
        metrics.push(row);
        let done = i + 1;
        if done % cfg.checkpoint_interval as u64 == 0 {
            checkpoints.push(nets.save(setup, out_dir, done)?);
        }
    }
    Ok(SelectorSummary {
        metrics,
        checkpoints,
        selector: nets.selector,
        value: nets.value,
        estimator: nets.estimator,
        library,
    })
}

