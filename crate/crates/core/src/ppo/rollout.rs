//! Parallel on-policy rollout collection.
//!
//! Every worker is reseeded from its own stream before collection, so a
//! batch depends only on the stream key and the networks, never on how
//! rayon schedules the workers.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gae::{gae_advantages, GaeStep};
use crate::dynamics::NUM_JOINTS;
use crate::env::{Env, HeightSource, ObservationLayout, TaskKind, NUM_COSTS};
use crate::error::{Error, Result};
use crate::nn::{Mlp, Policy};
use crate::seeding::rng_for;

/// What a worker reports for one decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerStep {
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
    /// `c_w + c_v` averaged over the control steps of this decision.
    pub tracking_cost: f64,
    pub costs: [f64; NUM_COSTS],
    pub max_abs_torque: f64,
}

/// An environment driven by a policy's raw action vector.
pub trait RolloutWorker: Send {
    fn reseed(&mut self, rng: ChaCha8Rng);
    fn reset(&mut self) -> Result<()>;
    /// Network input for the current state.
    fn observe(&mut self) -> Result<Vec<f64>>;
    fn act(&mut self, action: &[f64]) -> Result<WorkerStep>;
    fn rng(&mut self) -> &mut ChaCha8Rng;
}

/// A behavior task: actions are offsets from the task's reference posture.
pub struct TaskWorker {
    pub env: Env,
    scale: Vec<f64>,
}

impl TaskWorker {
    pub fn new(env: Env) -> Result<Self> {
        let kind = env.config.task.kind;
        if kind == TaskKind::Selector {
            return Err(Error::InvalidArgument("the selector task has its own worker".into()));
        }
        let scale = ObservationLayout::for_task(kind, env.config.history_len).input_scale();
        Ok(TaskWorker { env, scale })
    }

    pub fn kind(&self) -> TaskKind {
        self.env.config.task.kind
    }
}

/// Applies a layout's input scale in place.
pub fn scale_input(obs: &mut [f64], scale: &[f64]) {
    for (o, s) in obs.iter_mut().zip(scale) {
        *o *= s;
    }
}

/// Joint targets for a behavior action.
pub fn joint_targets(kind: TaskKind, action: &[f64]) -> Result<[f64; NUM_JOINTS]> {
    crate::error::ensure_len("behavior action", NUM_JOINTS, action.len())?;
    let reference = kind.action_reference();
    Ok(std::array::from_fn(|j| reference[j] + action[j]))
}

impl RolloutWorker for TaskWorker {
    fn reseed(&mut self, rng: ChaCha8Rng) {
        self.env.reseed(rng);
    }

    fn reset(&mut self) -> Result<()> {
        self.env.reset();
        Ok(())
    }

    fn observe(&mut self) -> Result<Vec<f64>> {
        let kind = self.kind();
        let height = if kind.uses_height() { HeightSource::True } else { HeightSource::None };
        let mut obs = self.env.observe(kind, height, None)?;
        scale_input(&mut obs, &self.scale);
        Ok(obs)
    }

    fn act(&mut self, action: &[f64]) -> Result<WorkerStep> {
        let target = joint_targets(self.kind(), action)?;
        let out = self.env.step(&target)?;
        Ok(WorkerStep {
            reward: out.reward,
            terminal: out.terminal,
            truncated: out.truncated,
            tracking_cost: out.costs.tracking(),
            costs: out.costs.as_array(),
            max_abs_torque: out.max_abs_torque,
        })
    }

    fn rng(&mut self) -> &mut ChaCha8Rng {
        self.env.rng()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    /// Log-probability under the collecting policy.
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// V(s_{t+1}), or 0 after a terminal step.
    pub next_value: f64,
    pub terminal: bool,
    /// Episode or rollout ends after this step.
    pub boundary: bool,
    /// Step index within the episode.
    pub time: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutStats {
    pub mean_reward: f64,
    pub mean_tracking_cost: f64,
    pub mean_costs: [f64; NUM_COSTS],
    pub mean_value: f64,
    /// Episodes ended by the state (falls and divergence).
    pub terminations: usize,
    /// Episodes ended by a non-finite simulator state.
    pub diverged: usize,
    pub max_abs_torque: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    /// Environment-major: env `e` occupies `e*horizon .. (e+1)*horizon`.
    pub transitions: Vec<Transition>,
    pub num_envs: usize,
    pub horizon: usize,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub stats: RolloutStats,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.observation.len())
    }

    pub fn action_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.action.len())
    }

    /// Recomputes advantages and returns from the stored rewards and values.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let steps: Vec<GaeStep> = self
            .transitions
            .iter()
            .map(|t| GaeStep {
                reward: t.reward,
                value: t.value,
                next_value: t.next_value,
                terminal: t.terminal,
                boundary: t.boundary,
            })
            .collect();
        let mut adv = Vec::with_capacity(steps.len());
        let mut ret = Vec::with_capacity(steps.len());
        for chunk in steps.chunks(self.horizon.max(1)) {
            let (a, r) = gae_advantages(chunk, gamma, lambda);
            adv.extend(a);
            ret.extend(r);
        }
        self.advantages = adv;
        self.returns = ret;
    }
}

struct EnvTrajectory {
    transitions: Vec<Transition>,
    /// (index within the trajectory, observation after it) for steps that
    /// end without a terminal state.
    bootstrap: Vec<(usize, Vec<f64>)>,
    tracking: f64,
    costs: [f64; NUM_COSTS],
    terminations: usize,
    diverged: usize,
    max_abs_torque: f64,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_) | Error::Diverged(_))
}

fn run_worker<W: RolloutWorker>(worker: &mut W, policy: &Policy, horizon: usize, rng: ChaCha8Rng) -> Result<EnvTrajectory> {
    worker.reseed(rng);
    worker.reset()?;
    let mut traj = EnvTrajectory {
        transitions: Vec::with_capacity(horizon),
        bootstrap: Vec::new(),
        tracking: 0.0,
        costs: [0.0; NUM_COSTS],
        terminations: 0,
        diverged: 0,
        max_abs_torque: 0.0,
    };
    let mut time = 0;
    for t in 0..horizon {
        let obs = worker.observe()?;
        let (action, log_prob) = policy.sample(&obs, worker.rng())?;
        let step = match worker.act(&action) {
            Ok(s) => s,
            Err(e) if is_divergence(&e) => {
                log::warn!("rollout: episode diverged at step {time}: {e}");
                traj.diverged += 1;
                WorkerStep {
                    reward: 0.0,
                    terminal: true,
                    truncated: false,
                    tracking_cost: 0.0,
                    costs: [0.0; NUM_COSTS],
                    max_abs_torque: 0.0,
                }
            }
            Err(e) => return Err(e),
        };
        traj.tracking += step.tracking_cost;
        for (acc, c) in traj.costs.iter_mut().zip(step.costs) {
            *acc += c;
        }
        traj.max_abs_torque = traj.max_abs_torque.max(step.max_abs_torque);
        let boundary = step.terminal || step.truncated || t + 1 == horizon;
        if step.terminal {
            traj.terminations += 1;
        } else if boundary {
            traj.bootstrap.push((t, worker.observe()?));
        }
        traj.transitions.push(Transition {
            observation: obs,
            action,
            log_prob,
            reward: step.reward,
            value: 0.0,
            next_value: 0.0,
            terminal: step.terminal,
            boundary,
            time,
        });
        time += 1;
        if step.terminal || step.truncated {
            worker.reset()?;
            time = 0;
        }
    }
    Ok(traj)
}

/// Runs every worker for `horizon` decisions under `policy`, then fills in
/// values (`value_scale * value(s)`) and GAE advantages. Worker `e` is
/// reseeded from `stream ++ [e]`.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout<W: RolloutWorker>(
    workers: &mut [W],
    policy: &Policy,
    value: &Mlp,
    horizon: usize,
    value_scale: f64,
    stream: &[u64],
    gamma: f64,
    lambda: f64,
) -> Result<RolloutBatch> {
    if workers.is_empty() || horizon == 0 {
        return Err(Error::InvalidArgument("rollout needs at least one worker and one step".into()));
    }
    let trajectories: Vec<EnvTrajectory> = workers
        .par_iter_mut()
        .enumerate()
        .map(|(e, w)| {
            let mut key = stream.to_vec();
            key.push(e as u64);
            run_worker(w, policy, horizon, rng_for(&key))
        })
        .collect::<Result<_>>()?;

    let obs_dim = policy.obs_dim();
    let mut inputs = Vec::with_capacity(workers.len() * horizon * obs_dim);
    for tr in &trajectories {
        for t in &tr.transitions {
            inputs.extend_from_slice(&t.observation);
        }
    }
    let n = workers.len() * horizon;
    let values: Vec<f64> = value.forward_batch(&inputs, n)?.output().iter().map(|v| v * value_scale).collect();
    let mut boot_inputs = Vec::new();
    let mut boot_count = 0;
    for tr in &trajectories {
        for (_, o) in &tr.bootstrap {
            boot_inputs.extend_from_slice(o);
            boot_count += 1;
        }
    }
    let boot_values = if boot_count > 0 {
        value.forward_batch(&boot_inputs, boot_count)?.output().iter().map(|v| v * value_scale).collect()
    } else {
        Vec::new()
    };

    let mut stats = RolloutStats::default();
    let mut transitions = Vec::with_capacity(n);
    let mut b = 0;
    for (e, tr) in trajectories.into_iter().enumerate() {
        let base = e * horizon;
        let mut boot = tr.bootstrap.iter().map(|(i, _)| *i).peekable();
        let mut trans = tr.transitions;
        for (t, tx) in trans.iter_mut().enumerate() {
            tx.value = values[base + t];
            tx.next_value = if tx.terminal {
                0.0
            } else if boot.peek() == Some(&t) {
                boot.next();
                b += 1;
                boot_values[b - 1]
            } else {
                values[base + t + 1]
            };
        }
        stats.mean_tracking_cost += tr.tracking;
        for (acc, c) in stats.mean_costs.iter_mut().zip(tr.costs) {
            *acc += c;
        }
        stats.terminations += tr.terminations;
        stats.diverged += tr.diverged;
        stats.max_abs_torque = stats.max_abs_torque.max(tr.max_abs_torque);
        transitions.extend(trans);
    }
    let inv = 1.0 / n as f64;
    stats.mean_reward = transitions.iter().map(|t| t.reward).sum::<f64>() * inv;
    stats.mean_value = values.iter().sum::<f64>() * inv;
    stats.mean_tracking_cost *= inv;
    for c in &mut stats.mean_costs {
        *c *= inv;
    }
    let mut batch = RolloutBatch {
        transitions,
        num_envs: workers.len(),
        horizon,
        advantages: Vec::new(),
        returns: Vec::new(),
        stats,
    };
    batch.compute_advantages(gamma, lambda);
    Ok(batch)
}
