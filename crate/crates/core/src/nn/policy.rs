//! Stochastic policy heads on top of an [`Mlp`].
//!
//! A policy's trainable parameters are exposed as one flat vector: the MLP
//! parameters followed (for the Gaussian head) by the log-std vector.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian with a state-independent log-std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

/// Softmax over discrete choices; actions are one-hot vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    pub logits: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Gaussian(GaussianPolicy),
    Categorical(CategoricalPolicy),
}

/// Batched log-probabilities with what is needed to differentiate them.
pub struct LogProbCache {
    mlp: MlpCache,
    actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Per-sample entropy.
    pub entropies: Vec<f64>,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn one_hot_index(a: &[f64]) -> Result<usize> {
    let idx = a.iter().position(|&v| v == 1.0);
    match idx {
        Some(i) if a.iter().filter(|&&v| v != 0.0).count() == 1 => Ok(i),
        _ => Err(Error::InvalidArgument(format!("not a one-hot action: {a:?}"))),
    }
}

impl GaussianPolicy {
    pub fn new(mean: Mlp, initial_std: f64) -> Self {
        let dim = mean.output_dim();
        GaussianPolicy {
            mean,
            log_std: vec![initial_std.ln(); dim],
        }
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| l + 0.5 * (LN_2PI + 1.0)).sum()
    }

    fn log_density(&self, mean: &[f64], action: &[f64]) -> f64 {
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), l)| {
                let z = (a - m) * (-l).exp();
                -0.5 * z * z - l - 0.5 * LN_2PI
            })
            .sum()
    }
}

impl CategoricalPolicy {
    pub fn probabilities(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits.forward(obs)?).iter().map(|l| l.exp()).collect())
    }
}

impl Policy {
    pub fn mlp(&self) -> &Mlp {
        match self {
            Policy::Gaussian(p) => &p.mean,
            Policy::Categorical(p) => &p.logits,
        }
    }

    fn mlp_mut(&mut self) -> &mut Mlp {
        match self {
            Policy::Gaussian(p) => &mut p.mean,
            Policy::Categorical(p) => &mut p.logits,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.mlp().input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mlp().output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.mlp().num_params()
            + match self {
                Policy::Gaussian(p) => p.log_std.len(),
                Policy::Categorical(_) => 0,
            }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.mlp().params().to_vec();
        if let Policy::Gaussian(p) = self {
            out.extend_from_slice(&p.log_std);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "policy parameters",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let n = self.mlp().num_params();
        self.mlp_mut().params_mut().copy_from_slice(&flat[..n]);
        if let Policy::Gaussian(p) = self {
            p.log_std.copy_from_slice(&flat[n..]);
        }
        Ok(())
    }

    /// Draws an action and returns it with its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let out = self.mlp().forward(obs)?;
        match self {
            Policy::Gaussian(p) => {
                let action: Vec<f64> = out
                    .iter()
                    .zip(&p.log_std)
                    .map(|(m, l)| {
                        let n: f64 = StandardNormal.sample(rng);
                        m + l.exp() * n
                    })
                    .collect();
                let lp = p.log_density(&out, &action);
                Ok((action, lp))
            }
            Policy::Categorical(_) => {
                let logp = log_softmax(&out);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = logp.len() - 1;
                for (i, l) in logp.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                let mut action = vec![0.0; logp.len()];
                action[pick] = 1.0;
                Ok((action, logp[pick]))
            }
        }
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.log_prob_batch(obs, action, 1)?.log_probs[0])
    }

    /// Mean (Gaussian) or most likely choice as one-hot (categorical).
    pub fn deterministic_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.mlp().forward(obs)?;
        match self {
            Policy::Gaussian(_) => Ok(out),
            Policy::Categorical(_) => {
                let best = out
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, v)| if *v > out[b] { i } else { b });
                let mut action = vec![0.0; out.len()];
                action[best] = 1.0;
                Ok(action)
            }
        }
    }

    pub fn log_prob_batch(&self, obs: &[f64], actions: &[f64], batch: usize) -> Result<LogProbCache> {
        let dim = self.action_dim();
        if actions.len() != batch * dim {
            return Err(Error::DimensionMismatch {
                what: "actions",
                expected: batch * dim,
                got: actions.len(),
            });
        }
        let mlp = self.mlp().forward_batch(obs, batch)?;
        let out = mlp.output();
        let mut log_probs = Vec::with_capacity(batch);
        let mut entropies = Vec::with_capacity(batch);
        for s in 0..batch {
            let o = &out[s * dim..(s + 1) * dim];
            let a = &actions[s * dim..(s + 1) * dim];
            match self {
                Policy::Gaussian(p) => {
                    log_probs.push(p.log_density(o, a));
                    entropies.push(p.entropy());
                }
                Policy::Categorical(_) => {
                    let logp = log_softmax(o);
                    log_probs.push(logp[one_hot_index(a)?]);
                    entropies.push(-logp.iter().map(|l| l.exp() * l).sum::<f64>());
                }
            }
        }
        Ok(LogProbCache {
            mlp,
            actions: actions.to_vec(),
            log_probs,
            entropies,
        })
    }

    /// Flat parameter gradient of
    /// `sum_i d_logp[i] * log_prob_i + d_entropy[i] * entropy_i`.
    pub fn backward(&self, cache: &LogProbCache, d_logp: &[f64], d_entropy: &[f64]) -> Result<Vec<f64>> {
        let batch = cache.mlp.batch();
        if d_logp.len() != batch || d_entropy.len() != batch {
            return Err(Error::DimensionMismatch {
                what: "log-prob gradient",
                expected: batch,
                got: d_logp.len().min(d_entropy.len()),
            });
        }
        let dim = self.action_dim();
        let out = cache.mlp.output();
        let mut grad_out = vec![0.0; batch * dim];
        let mut grad_log_std = vec![0.0; dim];
        for s in 0..batch {
            let o = &out[s * dim..(s + 1) * dim];
            let a = &cache.actions[s * dim..(s + 1) * dim];
            let g = &mut grad_out[s * dim..(s + 1) * dim];
            match self {
                Policy::Gaussian(p) => {
                    for k in 0..dim {
                        let inv_var = (-2.0 * p.log_std[k]).exp();
                        let diff = a[k] - o[k];
                        g[k] = d_logp[s] * diff * inv_var;
                        grad_log_std[k] += d_logp[s] * (diff * diff * inv_var - 1.0) + d_entropy[s];
                    }
                }
                Policy::Categorical(_) => {
                    let logp = log_softmax(o);
                    let pick = one_hot_index(a)?;
                    let h = cache.entropies[s];
                    for k in 0..dim {
                        let p = logp[k].exp();
                        let onehot = if k == pick { 1.0 } else { 0.0 };
                        // dH/dz_k = -p_k (log p_k + H)
                        g[k] = d_logp[s] * (onehot - p) - d_entropy[s] * p * (logp[k] + h);
                    }
                }
            }
        }
        let mut grads = self.mlp().backward(&cache.mlp, &grad_out)?;
        if let Policy::Gaussian(_) = self {
            grads.extend_from_slice(&grad_log_std);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(seed: u64, std: f64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Policy::Gaussian(GaussianPolicy::new(
            Mlp::orthogonal(&[5, 16, 4], 2f64.sqrt(), 1.0, &mut rng).unwrap(),
            std,
        ))
    }

    #[test]
    fn log_prob_at_mean_with_unit_std() {
        let p = gaussian(1, 1.0);
        let obs = [0.1, -0.3, 0.2, 0.0, 1.0];
        let mean = p.deterministic_action(&obs).unwrap();
        let lp = p.log_prob(&obs, &mean).unwrap();
        assert!((lp - (-2.0 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn sampled_log_prob_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = gaussian(2, 0.4);
        let obs = [0.5; 5];
        for _ in 0..50 {
            let (a, lp) = p.sample(&obs, &mut rng).unwrap();
            assert_eq!(p.log_prob(&obs, &a).unwrap(), lp);
        }
    }

    #[test]
    fn tiny_std_samples_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = gaussian(3, 1e-300);
        let obs = [0.2; 5];
        let mean = p.deterministic_action(&obs).unwrap();
        let (a, _) = p.sample(&obs, &mut rng).unwrap();
        assert_eq!(a, mean);
    }

    #[test]
    fn deterministic_ignores_rng_state() {
        let p = gaussian(5, 0.4);
        let obs = [0.3; 5];
        let a = p.deterministic_action(&obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = p.sample(&obs, &mut rng).unwrap();
        assert_eq!(p.deterministic_action(&obs).unwrap(), a);
    }

    #[test]
    fn categorical_samples_follow_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = Policy::Categorical(CategoricalPolicy {
            logits: Mlp::orthogonal(&[4, 8, 3], 1.0, 1.0, &mut rng).unwrap(),
        });
        let obs = [0.5, -1.0, 0.2, 0.9];
        let probs = match &p {
            Policy::Categorical(c) => c.probabilities(&obs).unwrap(),
            _ => unreachable!(),
        };
        let n = 60_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (a, lp) = p.sample(&obs, &mut rng).unwrap();
            let i = one_hot_index(&a).unwrap();
            assert!((lp - probs[i].ln()).abs() < 1e-12);
            counts[i] += 1;
        }
        for k in 0..3 {
            let f = counts[k] as f64 / n as f64;
            let se = (probs[k] * (1.0 - probs[k]) / n as f64).sqrt();
            assert!((f - probs[k]).abs() < 4.0 * se);
        }
        assert!(p.log_prob(&obs, &[0.5, 0.5, 0.0]).is_err());
    }
}
