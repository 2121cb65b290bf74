//! Clipped surrogate objective.

use serde::{Deserialize, Serialize};

use super::gae::importance_ratio;
use crate::error::Result;

/// `min(rho A, clip(rho, 1 - eps, 1 + eps) A)`.
pub fn surrogate_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// True when the clipped branch is strictly smaller than the unclipped one,
/// so the term is constant in the ratio.
pub fn clip_binding(ratio: f64, advantage: f64, eps: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps)
}

/// Derivative of the term with respect to `log pi_new(a|s)`.
pub fn term_dlogp(ratio: f64, advantage: f64, eps: f64) -> f64 {
    if clip_binding(ratio, advantage, eps) {
        0.0
    } else {
        ratio * advantage
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStats {
    /// `-mean(term)`.
    pub loss: f64,
    /// Fraction of samples with `|rho - 1| > eps`.
    pub clip_fraction: f64,
    /// Mean of `(rho - 1) - ln rho`, a non-negative KL(old || new) estimate.
    pub approx_kl: f64,
}

/// Loss, statistics and per-sample `d loss / d logp_new`.
pub fn clipped_surrogate(
    logp_new: &[f64],
    logp_old: &[f64],
    advantages: &[f64],
    eps: f64,
) -> Result<(SurrogateStats, Vec<f64>)> {
    let n = logp_new.len();
    crate::error::ensure_len("old log-probabilities", n, logp_old.len())?;
    crate::error::ensure_len("advantages", n, advantages.len())?;
    let inv_n = 1.0 / n as f64;
    let mut stats = SurrogateStats::default();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let rho = importance_ratio(logp_new[i], logp_old[i])?;
        let a = advantages[i];
        stats.loss -= surrogate_term(rho, a, eps) * inv_n;
        if (rho - 1.0).abs() > eps {
            stats.clip_fraction += inv_n;
        }
        stats.approx_kl += (rho - 1.0 - (logp_new[i] - logp_old[i])) * inv_n;
        grad.push(-term_dlogp(rho, a, eps) * inv_n);
    }
    Ok((stats, grad))
}
