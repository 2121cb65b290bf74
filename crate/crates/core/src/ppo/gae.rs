//! Importance ratios and generalized advantage estimation.

use crate::error::{Error, Result};

/// Upper bound returned when `exp` would overflow.
pub const RATIO_SENTINEL: f64 = 1e300;

/// `pi_new(a|s) / pi_old(a|s)` from log-probabilities.
pub fn importance_ratio(logp_new: f64, logp_old: f64) -> Result<f64> {
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(Error::NonFinite(format!("log-probabilities {logp_new}, {logp_old}")));
    }
    let r = (logp_new - logp_old).exp();
    if r.is_finite() {
        Ok(r)
    } else {
        log::warn!("importance ratio overflow: log ratio {}", logp_new - logp_old);
        Ok(RATIO_SENTINEL)
    }
}

/// One step of a single environment's trajectory, in time order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaeStep {
    pub reward: f64,
    pub value: f64,
    /// V(s_{t+1}); ignored when `terminal`.
    pub next_value: f64,
    /// The state after this step is absorbing (value 0).
    pub terminal: bool,
    /// The trajectory is cut after this step (terminal, time limit or end of
    /// the rollout); the recursion does not look past it.
    pub boundary: bool,
}

/// Advantages and return targets (`advantage + value`).
pub fn gae_advantages(steps: &[GaeStep], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = steps.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let s = &steps[t];
        let bootstrap = if s.terminal { 0.0 } else { s.next_value };
        let delta = s.reward + gamma * bootstrap - s.value;
        let carry = if s.boundary || s.terminal { 0.0 } else { next_adv };
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(steps).map(|(a, s)| a + s.value).collect();
    (adv, returns)
}

/// Shifts `values` by one to produce `GaeStep`s for a contiguous trajectory
/// whose last step bootstraps from `last_next_value`.
pub fn chain_steps(rewards: &[f64], values: &[f64], terminal: &[bool], boundary: &[bool], last_next_value: f64) -> Vec<GaeStep> {
    let n = rewards.len();
    (0..n)
        .map(|t| GaeStep {
            reward: rewards[t],
            value: values[t],
            next_value: if t + 1 < n { values[t + 1] } else { last_next_value },
            terminal: terminal[t],
            boundary: boundary[t] || t + 1 == n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(importance_ratio(-1.3, -1.3).unwrap(), 1.0);
        assert!((importance_ratio(2f64.ln(), 0.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(importance_ratio(1e4, 0.0).unwrap(), RATIO_SENTINEL);
        assert!(importance_ratio(f64::NAN, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn ratio_is_reciprocal(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let p = importance_ratio(a, b).unwrap() * importance_ratio(b, a).unwrap();
            prop_assert!((p - 1.0).abs() < 1e-12);
        }

        #[test]
        fn lambda_zero_gives_td_error(
            data in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 1..30),
            gamma in 0.0f64..=1.0,
        ) {
            let rewards: Vec<f64> = data.iter().map(|d| d.0).collect();
            let values: Vec<f64> = data.iter().map(|d| d.1).collect();
            let term: Vec<bool> = data.iter().map(|d| d.2).collect();
            let steps = chain_steps(&rewards, &values, &term, &term, 0.7);
            let (adv, ret) = gae_advantages(&steps, gamma, 0.0);
            for (t, s) in steps.iter().enumerate() {
                let nv = if s.terminal { 0.0 } else { s.next_value };
                prop_assert_eq!(adv[t], s.reward + gamma * nv - s.value);
                prop_assert_eq!(ret[t], adv[t] + s.value);
            }
        }

        #[test]
        fn unit_discount_matches_monte_carlo(
            data in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
        ) {
            let rewards: Vec<f64> = data.iter().map(|d| d.0).collect();
            let values: Vec<f64> = data.iter().map(|d| d.1).collect();
            let n = rewards.len();
            let mut term = vec![false; n];
            term[n - 1] = true;
            let steps = chain_steps(&rewards, &values, &term, &term, 0.0);
            let (adv, _) = gae_advantages(&steps, 1.0, 1.0);
            for t in 0..n {
                let mc: f64 = rewards[t..].iter().sum();
                prop_assert!((adv[t] - (mc - values[t])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn five_step_episode_matches_direct_sum() {
        // A_t = sum_l (gamma lambda)^l delta_{t+l} within the episode
        let rewards = [1.0, -0.5, 2.0, 0.25, 3.0];
        let values = [0.3, -0.2, 1.1, 0.4, -0.7];
        let (gamma, lambda) = (0.9, 0.8);
        let term = [false, false, false, false, true];
        let steps = chain_steps(&rewards, &values, &term, &term, 0.0);
        let (adv, _) = gae_advantages(&steps, gamma, lambda);
        let delta: Vec<f64> = (0..5)
            .map(|t| {
                let next = if t < 4 { values[t + 1] } else { 0.0 };
                rewards[t] + gamma * next - values[t]
            })
            .collect();
        for t in 0..5 {
            let direct: f64 = (t..5).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum();
            assert!((adv[t] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_bootstraps_without_crossing() {
        // step 1 is truncated: it uses its own bootstrap value and does not
        // see the advantage of step 2, which starts a new episode
        let steps = [
            GaeStep { reward: 1.0, value: 0.0, next_value: 0.5, terminal: false, boundary: false },
            GaeStep { reward: 1.0, value: 0.5, next_value: 2.0, terminal: false, boundary: true },
            GaeStep { reward: 10.0, value: 0.0, next_value: 0.0, terminal: true, boundary: true },
        ];
        let (adv, _) = gae_advantages(&steps, 1.0, 1.0);
        assert_eq!(adv[1], 1.0 + 2.0 - 0.5);
        assert_eq!(adv[0], 1.0 + 0.5 - 0.0 + adv[1]);
        assert_eq!(adv[2], 10.0);
    }
}
