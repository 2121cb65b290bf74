//! K-epoch minibatch updates of the policy and value networks.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rollout::RolloutBatch;
use super::surrogate::{clipped_surrogate, SurrogateStats};
use super::PpoConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Mlp, Policy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Means over all minibatch steps, each taken before its Adam step.
    pub surrogate_loss: f64,
    /// Mean squared error in return units.
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub adam_steps: usize,
    /// A non-finite loss or gradient aborted the update and restored the
    /// networks and optimizers.
    pub rolled_back: bool,
}

/// Advantages as used by the update (normalized when configured).
pub fn prepared_advantages(batch: &RolloutBatch, normalize: bool) -> Vec<f64> {
    let adv = &batch.advantages;
    if !normalize || adv.len() < 2 {
        return adv.clone();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    adv.iter().map(|a| (a - mean) * inv).collect()
}

fn gather(batch: &RolloutBatch, idx: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut obs = Vec::with_capacity(idx.len() * batch.obs_dim());
    let mut act = Vec::with_capacity(idx.len() * batch.action_dim());
    let mut old = Vec::with_capacity(idx.len());
    for &i in idx {
        let t = &batch.transitions[i];
        obs.extend_from_slice(&t.observation);
        act.extend_from_slice(&t.action);
        old.push(t.log_prob);
    }
    (obs, act, old)
}

/// Clipped surrogate of `policy` on the whole batch against the collecting
/// policy's log-probabilities.
pub fn evaluate_surrogate(batch: &RolloutBatch, policy: &Policy, cfg: &PpoConfig) -> Result<SurrogateStats> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (obs, act, old) = gather(batch, &idx);
    let cache = policy.log_prob_batch(&obs, &act, idx.len())?;
    let adv = prepared_advantages(batch, cfg.normalize_advantages);
    Ok(clipped_surrogate(&cache.log_probs, &old, &adv, cfg.clip_epsilon)?.0)
}

fn clip_norm(grads: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grads.iter_mut().for_each(|g| *g *= s);
        }
    }
}

struct MinibatchOutcome {
    surrogate: SurrogateStats,
    value_loss: f64,
    entropy: f64,
}

#[allow(clippy::too_many_arguments)]
fn minibatch_step(
    batch: &RolloutBatch,
    idx: &[usize],
    adv_all: &[f64],
    policy: &mut Policy,
    value: &mut Mlp,
    policy_adam: &mut AdamState,
    value_adam: &mut AdamState,
    cfg: &PpoConfig,
) -> Result<MinibatchOutcome> {
    let m = idx.len();
    let (obs, act, old) = gather(batch, idx);
    let adv: Vec<f64> = idx.iter().map(|&i| adv_all[i]).collect();

    let cache = policy.log_prob_batch(&obs, &act, m)?;
    let (surrogate, d_logp) = clipped_surrogate(&cache.log_probs, &old, &adv, cfg.clip_epsilon)?;
    let entropy = cache.entropies.iter().sum::<f64>() / m as f64;
    let policy_loss = surrogate.loss - cfg.entropy_coef * entropy;
    let d_entropy = vec![-cfg.entropy_coef / m as f64; m];
    let mut pg = policy.backward(&cache, &d_logp, &d_entropy)?;

    let scale = cfg.value_scale();
    let targets: Vec<f64> = idx.iter().map(|&i| batch.returns[i] / scale).collect();
    let (scaled_loss, mut vg) = crate::nn::mse_loss_grad(value, &obs, &targets)?;
    vg.iter_mut().for_each(|g| *g *= cfg.value_coef);
    let value_loss = scaled_loss * scale * scale;

    if !policy_loss.is_finite() || !value_loss.is_finite() {
        return Err(Error::NonFinite(format!("ppo losses {policy_loss}, {value_loss}")));
    }
    clip_norm(&mut pg, cfg.max_grad_norm);
    clip_norm(&mut vg, cfg.max_grad_norm);
    let mut flat = policy.flat_params();
    policy_adam.update(&mut flat, &pg)?;
    policy.set_flat_params(&flat)?;
    value_adam.update(value.params_mut(), &vg)?;
    Ok(MinibatchOutcome { surrogate, value_loss, entropy })
}

/// Runs `epochs` passes of shuffled minibatches over `batch`. On a
/// non-finite loss or gradient everything is restored to its state on entry
/// and the stats are flagged `rolled_back`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    batch: &RolloutBatch,
    policy: &mut Policy,
    value: &mut Mlp,
    policy_adam: &mut AdamState,
    value_adam: &mut AdamState,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty rollout batch".into()));
    }
    crate::error::ensure_len("advantages", batch.len(), batch.advantages.len())?;
    crate::error::ensure_len("returns", batch.len(), batch.returns.len())?;
    let saved = (policy.clone(), value.clone(), policy_adam.clone(), value_adam.clone());
    let adv = prepared_advantages(batch, cfg.normalize_advantages);
    let mb = cfg.minibatch_size.unwrap_or_else(|| batch.len().div_ceil(4)).clamp(1, batch.len());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb) {
            match minibatch_step(batch, idx, &adv, policy, value, policy_adam, value_adam, cfg) {
                Ok(o) => {
                    stats.surrogate_loss += o.surrogate.loss;
                    stats.clip_fraction += o.surrogate.clip_fraction;
                    stats.approx_kl += o.surrogate.approx_kl;
                    stats.value_loss += o.value_loss;
                    stats.entropy += o.entropy;
                    stats.adam_steps += 1;
                }
                Err(Error::NonFinite(msg)) => {
                    log::warn!("ppo update rolled back: {msg}");
                    (*policy, *value, *policy_adam, *value_adam) = saved;
                    return Ok(UpdateStats { rolled_back: true, ..UpdateStats::default() });
                }
                Err(e) => return Err(e),
            }
        }
    }
    let k = stats.adam_steps as f64;
    stats.surrogate_loss /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    Ok(stats)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn;
    use crate::ppo::rollout::{RolloutStats, Transition};
    use crate::seeding::rng_for;
    use rand_distr::{Distribution, StandardNormal};

    /// A batch sampled from `policy` with random advantages and returns.
    pub(crate) fn synthetic_batch(policy: &Policy, n: usize, seed: u64) -> RolloutBatch {
        let mut rng = rng_for(&[seed]);
        let mut transitions = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for t in 0..n {
            let obs: Vec<f64> = (0..policy.obs_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (action, log_prob) = policy.sample(&obs, &mut rng).unwrap();
            advantages.push(StandardNormal.sample(&mut rng));
            returns.push(StandardNormal.sample(&mut rng));
            transitions.push(Transition {
                observation: obs,
                action,
                log_prob,
                reward: 0.0,
                value: 0.0,
                next_value: 0.0,
                terminal: false,
                boundary: false,
                time: t,
            });
        }
        RolloutBatch {
            transitions,
            num_envs: 1,
            horizon: n,
            advantages,
            returns,
            stats: RolloutStats::default(),
        }
    }

    fn setup(seed: u64) -> (Policy, Mlp, AdamState, AdamState) {
        let mut rng = rng_for(&[seed, 99]);
        let policy = nn::gaussian_policy(5, 3, &[16], &mut rng).unwrap();
        let value = nn::regressor(5, &[16], &mut rng).unwrap();
        let pa = AdamState::new(policy.num_params(), 1e-3);
        let va = AdamState::new(value.num_params(), 1e-3);
        (policy, value, pa, va)
    }

    #[test]
    fn step_count_is_epochs_times_minibatches() {
        let (mut policy, mut value, mut pa, mut va) = setup(1);
        let batch = synthetic_batch(&policy, 10, 2);
        let cfg = PpoConfig { epochs: 4, minibatch_size: Some(3), ..Default::default() };
        let stats = ppo_update(&batch, &mut policy, &mut value, &mut pa, &mut va, &cfg, &mut rng_for(&[3])).unwrap();
        assert_eq!(stats.adam_steps, 16);
        assert_eq!(pa.step, 16);
        assert_eq!(va.step, 16);
    }

    #[test]
    fn update_decreases_surrogate_on_fixed_batch() {
        for seed in 0..5 {
            let (mut policy, mut value, mut pa, mut va) = setup(seed);
            let batch = synthetic_batch(&policy, 64, seed + 10);
            let cfg = PpoConfig { epochs: 1, minibatch_size: Some(64), max_grad_norm: None, ..Default::default() };
            let before = evaluate_surrogate(&batch, &policy, &cfg).unwrap().loss;
            ppo_update(&batch, &mut policy, &mut value, &mut pa, &mut va, &cfg, &mut rng_for(&[seed])).unwrap();
            let after = evaluate_surrogate(&batch, &policy, &cfg).unwrap().loss;
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn non_finite_loss_rolls_back() {
        let (mut policy, mut value, mut pa, mut va) = setup(4);
        let mut batch = synthetic_batch(&policy, 12, 5);
        batch.returns[7] = f64::NAN;
        let before = (policy.clone(), value.clone(), pa.clone(), va.clone());
        let cfg = PpoConfig { minibatch_size: Some(4), ..Default::default() };
        let stats = ppo_update(&batch, &mut policy, &mut value, &mut pa, &mut va, &cfg, &mut rng_for(&[6])).unwrap();
        assert!(stats.rolled_back);
        assert_eq!((policy, value, pa, va), before);
    }

    #[test]
    fn normalized_advantages_have_zero_mean_unit_variance() {
        let (policy, ..) = setup(7);
        let batch = synthetic_batch(&policy, 50, 8);
        let a = prepared_advantages(&batch, true);
        let mean = a.iter().sum::<f64>() / 50.0;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
